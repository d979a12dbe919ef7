#include "spatbeta/geo_mesh.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>

#include "spatbeta/error.hpp"
#include "spatbeta/rng.hpp"
#include "spatbeta/text.hpp"

namespace spatbeta {
namespace {

double cross(LonLat o, LonLat a, LonLat b) {
  return (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon);
}

double ring_signed_area(const std::vector<LonLat>& ring) {
  double s = 0.0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const auto& a = ring[i];
    const auto& b = ring[(i + 1) % n];
    s += a.lon * b.lat - b.lon * a.lat;
  }
  return 0.5 * s;
}

bool ring_contains(const std::vector<LonLat>& ring, LonLat p) {
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

int sign_of(double v) { return (v > 0) - (v < 0); }

bool segments_cross(LonLat a, LonLat b, LonLat c, LonLat d) {
  const int d1 = sign_of(cross(c, d, a));
  const int d2 = sign_of(cross(c, d, b));
  const int d3 = sign_of(cross(a, b, c));
  const int d4 = sign_of(cross(a, b, d));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  auto on_segment = [](LonLat p, LonLat q, LonLat r) {
    return std::min(p.lon, q.lon) <= r.lon && r.lon <= std::max(p.lon, q.lon) &&
           std::min(p.lat, q.lat) <= r.lat && r.lat <= std::max(p.lat, q.lat);
  };
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}

struct WorkTriangle {
  int a, b, c;
  double cx, cy, r2;
};

WorkTriangle make_work_triangle(const std::vector<LonLat>& pts, int a, int b, int c) {
  if (cross(pts[a], pts[b], pts[c]) < 0) std::swap(b, c);
  const long double ax = pts[a].lon, ay = pts[a].lat;
  const long double bx = pts[b].lon - ax, by = pts[b].lat - ay;
  const long double cx = pts[c].lon - ax, cy = pts[c].lat - ay;
  const long double d = 2.0L * (bx * cy - by * cx);
  WorkTriangle t{a, b, c, 0.0, 0.0, -1.0};
  if (d == 0.0L) {
    // Collinear: an empty circumcircle never captures points.
    return t;
  }
  const long double b2 = bx * bx + by * by;
  const long double c2 = cx * cx + cy * cy;
  const long double ux = (cy * b2 - by * c2) / d;
  const long double uy = (bx * c2 - cx * b2) / d;
  t.cx = static_cast<double>(ax + ux);
  t.cy = static_cast<double>(ay + uy);
  t.r2 = static_cast<double>(ux * ux + uy * uy);
  return t;
}

bool in_circumcircle(const WorkTriangle& t, LonLat p) {
  if (t.r2 < 0) return false;
  const long double dx = static_cast<long double>(p.lon) - t.cx;
  const long double dy = static_cast<long double>(p.lat) - t.cy;
  return dx * dx + dy * dy < static_cast<long double>(t.r2) * (1.0L - 1e-12L);
}

struct MeshAttempt {
  std::vector<LonLat> points;
  std::vector<Triangle> kept;
};

MeshAttempt triangulate_grid(const Region& region, int nx, int ny, std::uint64_t seed) {
  const auto [x0, y0, x1, y1] = region.bounds();
  const double dx = (x1 - x0) / nx;
  const double dy = (y1 - y0) / ny;
  Rng rng(seed);
  MeshAttempt attempt;
  attempt.points.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      LonLat p{x0 + i * dx, y0 + j * dy};
      if (i == nx) p.lon = x1;
      if (j == ny) p.lat = y1;
      if (i > 0 && i < nx && j > 0 && j < ny) {
        p.lon += (rng.uniform() - 0.5) * 0.5 * dx;
        p.lat += (rng.uniform() - 0.5) * 0.5 * dy;
      }
      attempt.points.push_back(p);
    }
  }
  const double min_area = 1e-12 * (x1 - x0) * (y1 - y0);
  for (const auto& t : delaunay(attempt.points)) {
    const auto& a = attempt.points[t[0]];
    const auto& b = attempt.points[t[1]];
    const auto& c = attempt.points[t[2]];
    if (0.5 * cross(a, b, c) <= min_area) continue;
    const LonLat centroid{(a.lon + b.lon + c.lon) / 3.0, (a.lat + b.lat + c.lat) / 3.0};
    if (region.contains(centroid)) attempt.kept.push_back(t);
  }
  return attempt;
}

}  // namespace

void Region::validate() const {
  if (rings.empty()) throw InvalidRegion("region has no rings");
  for (std::size_t r = 0; r < rings.size(); ++r) {
    const auto& ring = rings[r];
    std::vector<LonLat> distinct = ring;
    std::sort(distinct.begin(), distinct.end(), [](LonLat a, LonLat b) {
      return a.lon < b.lon || (a.lon == b.lon && a.lat < b.lat);
    });
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 3) {
      throw InvalidRegion("ring " + std::to_string(r) + " has fewer than 3 distinct vertices");
    }
    for (const auto& p : ring) {
      if (!std::isfinite(p.lon) || !std::isfinite(p.lat)) {
        throw InvalidRegion("ring " + std::to_string(r) + " has a non-finite coordinate");
      }
    }
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (j == i + 1 || (i == 0 && j == n - 1)) continue;
        if (segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])) {
          throw InvalidRegion("ring " + std::to_string(r) + " self-intersects");
        }
      }
    }
    if (r > 0) {
      for (const auto& p : ring) {
        if (!ring_contains(rings[0], p)) {
          throw InvalidRegion("hole " + std::to_string(r) + " is not inside the outer ring");
        }
      }
    }
  }
  if (!(area() > 0.0)) throw InvalidRegion("region has zero area");
}

double Region::area() const {
  if (rings.empty()) return 0.0;
  double a = std::abs(ring_signed_area(rings[0]));
  for (std::size_t r = 1; r < rings.size(); ++r) a -= std::abs(ring_signed_area(rings[r]));
  return a;
}

bool Region::contains(LonLat p) const {
  if (rings.empty() || !ring_contains(rings[0], p)) return false;
  for (std::size_t r = 1; r < rings.size(); ++r) {
    if (ring_contains(rings[r], p)) return false;
  }
  return true;
}

std::array<double, 4> Region::bounds() const {
  std::array<double, 4> b{HUGE_VAL, HUGE_VAL, -HUGE_VAL, -HUGE_VAL};
  for (const auto& ring : rings) {
    for (const auto& p : ring) {
      b[0] = std::min(b[0], p.lon);
      b[1] = std::min(b[1], p.lat);
      b[2] = std::max(b[2], p.lon);
      b[3] = std::max(b[3], p.lat);
    }
  }
  return b;
}

Region Region::rectangle(double lon0, double lat0, double lon1, double lat1) {
  return Region{{{{lon0, lat0}, {lon1, lat0}, {lon1, lat1}, {lon0, lat1}}}};
}

LonLat TriMesh::centroid(int t) const {
  const auto& tri = triangles.at(static_cast<std::size_t>(t));
  const auto& a = vertices[tri[0]];
  const auto& b = vertices[tri[1]];
  const auto& c = vertices[tri[2]];
  return {(a.lon + b.lon + c.lon) / 3.0, (a.lat + b.lat + c.lat) / 3.0};
}

double TriMesh::signed_area(int t) const {
  const auto& tri = triangles.at(static_cast<std::size_t>(t));
  return 0.5 * cross(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
}

std::vector<Triangle> delaunay(const std::vector<LonLat>& points) {
  if (points.size() < 3) return {};
  double x0 = HUGE_VAL, y0 = HUGE_VAL, x1 = -HUGE_VAL, y1 = -HUGE_VAL;
  for (const auto& p : points) {
    x0 = std::min(x0, p.lon);
    y0 = std::min(y0, p.lat);
    x1 = std::max(x1, p.lon);
    y1 = std::max(y1, p.lat);
  }
  const double span = std::max({x1 - x0, y1 - y0, 1e-9});
  const double mx = 0.5 * (x0 + x1);
  const double my = 0.5 * (y0 + y1);

  std::vector<LonLat> pts = points;
  const int n = static_cast<int>(points.size());
  pts.push_back({mx - 100.0 * span, my - 100.0 * span});
  pts.push_back({mx + 100.0 * span, my - 100.0 * span});
  pts.push_back({mx, my + 100.0 * span});

  std::vector<WorkTriangle> tris{make_work_triangle(pts, n, n + 1, n + 2)};
  std::vector<WorkTriangle> next;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    const LonLat p = pts[i];
    next.clear();
    edges.clear();
    for (const auto& t : tris) {
      if (in_circumcircle(t, p)) {
        edges.emplace_back(t.a, t.b);
        edges.emplace_back(t.b, t.c);
        edges.emplace_back(t.c, t.a);
      } else {
        next.push_back(t);
      }
    }
    // Cavity boundary: edges that appear once (shared edges appear in
    // opposite directions).
    std::map<std::pair<int, int>, int> count;
    for (auto [a, b] : edges) count[{std::min(a, b), std::max(a, b)}]++;
    for (auto [a, b] : edges) {
      if (count[{std::min(a, b), std::max(a, b)}] == 1) next.push_back(make_work_triangle(pts, a, b, i));
    }
    tris.swap(next);
  }

  std::vector<Triangle> out;
  for (const auto& t : tris) {
    if (t.a >= n || t.b >= n || t.c >= n) continue;
    if (cross(pts[t.a], pts[t.b], pts[t.c]) <= 0) continue;
    out.push_back({t.a, t.b, t.c});
  }
  return out;
}

TriMesh build_mesh(const Region& region, int target_triangles, std::uint64_t seed) {
  if (target_triangles < 1) throw ConfigError("target triangle count must be at least 1");
  region.validate();
  const auto [x0, y0, x1, y1] = region.bounds();
  const double width = x1 - x0;
  const double height = y1 - y0;
  const double fill = region.area() / (width * height);

  double cells = target_triangles / (2.0 * fill);
  MeshAttempt best;
  long best_error = -1;
  for (int attempt = 0; attempt < 16; ++attempt) {
    const int nx = std::max(1, static_cast<int>(std::lround(std::sqrt(cells * width / height))));
    const int ny = std::max(1, static_cast<int>(std::lround(cells / nx)));
    auto result = triangulate_grid(region, nx, ny, derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    const long count = static_cast<long>(result.kept.size());
    const long error = std::labs(count - target_triangles);
    if (best_error < 0 || error < best_error) {
      best_error = error;
      best = std::move(result);
    }
    if (best_error == 0 || best_error * 20 <= target_triangles) break;
    cells *= static_cast<double>(target_triangles) / std::max<long>(count, 1);
  }

  // Drop unused grid points and renumber; order triangles south to north.
  auto centroid_of = [&](const Triangle& t) {
    const auto& a = best.points[t[0]];
    const auto& b = best.points[t[1]];
    const auto& c = best.points[t[2]];
    return LonLat{(a.lon + b.lon + c.lon) / 3.0, (a.lat + b.lat + c.lat) / 3.0};
  };
  std::stable_sort(best.kept.begin(), best.kept.end(), [&](const Triangle& s, const Triangle& t) {
    const auto cs = centroid_of(s);
    const auto ct = centroid_of(t);
    return cs.lat < ct.lat || (cs.lat == ct.lat && cs.lon < ct.lon);
  });
  std::vector<int> remap(best.points.size(), -1);
  TriMesh mesh;
  mesh.region = region;
  for (const auto& t : best.kept) {
    Triangle out{};
    for (int k = 0; k < 3; ++k) {
      int& slot = remap[static_cast<std::size_t>(t[k])];
      if (slot < 0) {
        slot = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(best.points[static_cast<std::size_t>(t[k])]);
      }
      out[k] = slot;
    }
    mesh.triangles.push_back(out);
  }
  return mesh;
}

std::optional<int> locate_point(const TriMesh& mesh, double lon, double lat) {
  const LonLat p{lon, lat};
  for (int t = 0; t < mesh.size(); ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const auto& a = mesh.vertices[tri[0]];
    const auto& b = mesh.vertices[tri[1]];
    const auto& c = mesh.vertices[tri[2]];
    if (lon < std::min({a.lon, b.lon, c.lon}) - 1e-12 || lon > std::max({a.lon, b.lon, c.lon}) + 1e-12 ||
        lat < std::min({a.lat, b.lat, c.lat}) - 1e-12 || lat > std::max({a.lat, b.lat, c.lat}) + 1e-12) {
      continue;
    }
    // Tolerance scaled by twice the triangle area so shared-edge points
    // count as inside both neighbors.
    const double tol = 1e-10 * std::abs(cross(a, b, c));
    if (cross(a, b, p) >= -tol && cross(b, c, p) >= -tol && cross(c, a, p) >= -tol) return t;
  }
  return std::nullopt;
}

NeighborGraph NeighborGraph::from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
  NeighborGraph g;
  g.adjacency.assign(static_cast<std::size_t>(n), {});
  for (auto [a, b] : edges) {
    if (a == b) continue;
    g.adjacency[static_cast<std::size_t>(a)].push_back(b);
    g.adjacency[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& list : g.adjacency) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    g.degree.push_back(static_cast<int>(list.size()));
  }
  return g;
}

NeighborGraph build_neighbor_graph(const TriMesh& mesh) {
  std::vector<std::vector<int>> by_vertex(mesh.vertices.size());
  for (int t = 0; t < mesh.size(); ++t) {
    for (int v : mesh.triangles[static_cast<std::size_t>(t)]) by_vertex[static_cast<std::size_t>(v)].push_back(t);
  }
  NeighborGraph g;
  g.adjacency.resize(static_cast<std::size_t>(mesh.size()));
  for (int t = 0; t < mesh.size(); ++t) {
    auto& list = g.adjacency[static_cast<std::size_t>(t)];
    for (int v : mesh.triangles[static_cast<std::size_t>(t)]) {
      for (int s : by_vertex[static_cast<std::size_t>(v)]) {
        if (s != t) list.push_back(s);
      }
    }
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    g.degree.push_back(static_cast<int>(list.size()));
  }
  return g;
}

Components connected_components(const NeighborGraph& graph) {
  Components c;
  c.label.assign(static_cast<std::size_t>(graph.size()), -1);
  for (int start = 0; start < graph.size(); ++start) {
    if (c.label[static_cast<std::size_t>(start)] >= 0) continue;
    std::queue<int> q;
    q.push(start);
    c.label[static_cast<std::size_t>(start)] = c.count;
    while (!q.empty()) {
      const int i = q.front();
      q.pop();
      for (int j : graph.adjacency[static_cast<std::size_t>(i)]) {
        if (c.label[static_cast<std::size_t>(j)] < 0) {
          c.label[static_cast<std::size_t>(j)] = c.count;
          q.push(j);
        }
      }
    }
    ++c.count;
  }
  return c;
}

SparsePrecision precision_matrix(const NeighborGraph& graph) {
  SparsePrecision q;
  q.dimension = graph.size();
  for (int i = 0; i < graph.size(); ++i) {
    const auto& list = graph.adjacency[static_cast<std::size_t>(i)];
    bool diagonal_done = false;
    for (int j : list) {
      if (!diagonal_done && j > i) {
        q.entries.push_back({i, i, static_cast<double>(list.size())});
        diagonal_done = true;
      }
      q.entries.push_back({i, j, -1.0});
    }
    if (!diagonal_done && !list.empty()) q.entries.push_back({i, i, static_cast<double>(list.size())});
  }
  return q;
}

Eigen::SparseMatrix<double> SparsePrecision::to_eigen() const {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(entries.size());
  for (const auto& e : entries) triplets.emplace_back(e.row, e.col, e.value);
  Eigen::SparseMatrix<double> m(dimension, dimension);
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

double SparsePrecision::quadratic_form(const Eigen::VectorXd& x) const {
  double s = 0.0;
  for (const auto& e : entries) s += x[e.row] * e.value * x[e.col];
  return s;
}

void write_mesh(std::ostream& out, const TriMesh& mesh) {
  for (const auto& v : mesh.vertices) out << "v " << format_double(v.lon) << ' ' << format_double(v.lat) << '\n';
  for (const auto& t : mesh.triangles) out << "t " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

TriMesh read_mesh(std::istream& in) {
  TriMesh mesh;
  std::string line;
  int line_no = 0;
  while (read_line(in, line)) {
    ++line_no;
    const auto view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    std::istringstream ss{std::string(view)};
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      LonLat p;
      if (!(ss >> p.lon >> p.lat)) throw SchemaError("mesh line " + std::to_string(line_no) + ": bad vertex");
      mesh.vertices.push_back(p);
    } else if (tag == "t") {
      Triangle t{};
      if (!(ss >> t[0] >> t[1] >> t[2])) throw SchemaError("mesh line " + std::to_string(line_no) + ": bad triangle");
      mesh.triangles.push_back(t);
    } else {
      throw SchemaError("mesh line " + std::to_string(line_no) + ": unknown record '" + tag + "'");
    }
  }
  const int nv = static_cast<int>(mesh.vertices.size());
  for (const auto& t : mesh.triangles) {
    for (int v : t) {
      if (v < 0 || v >= nv) throw SchemaError("mesh triangle references missing vertex " + std::to_string(v));
    }
  }
  return mesh;
}

nlohmann::json mesh_geojson(const TriMesh& mesh, const std::vector<nlohmann::json>& properties) {
  nlohmann::json features = nlohmann::json::array();
  for (int t = 0; t < mesh.size(); ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    nlohmann::json ring = nlohmann::json::array();
    for (int k = 0; k <= 3; ++k) {
      const auto& v = mesh.vertices[static_cast<std::size_t>(tri[k % 3])];
      ring.push_back({v.lon, v.lat});
    }
    nlohmann::json props = {{"tri_id", t}};
    if (static_cast<std::size_t>(t) < properties.size() && properties[static_cast<std::size_t>(t)].is_object()) {
      for (const auto& [key, value] : properties[static_cast<std::size_t>(t)].items()) props[key] = value;
    }
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", nlohmann::json::array({ring})}}},
                        {"properties", props}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

Region read_region_geojson(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidRegion(std::string("region file is not valid JSON: ") + e.what());
  }
  const nlohmann::json* geometry = &doc;
  if (doc.value("type", "") == "FeatureCollection") {
    if (!doc.contains("features") || doc["features"].empty()) throw InvalidRegion("region has no features");
    geometry = &doc["features"][0]["geometry"];
  } else if (doc.value("type", "") == "Feature") {
    geometry = &doc["geometry"];
  }
  if (!geometry->is_object() || geometry->value("type", "") != "Polygon") {
    throw InvalidRegion("region geometry must be a Polygon");
  }
  Region region;
  try {
    for (const auto& ring_json : geometry->at("coordinates")) {
      std::vector<LonLat> ring;
      for (const auto& pt : ring_json) ring.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      if (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
      region.rings.push_back(std::move(ring));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidRegion(std::string("malformed region coordinates: ") + e.what());
  }
  region.validate();
  return region;
}

nlohmann::json region_geojson(const Region& region) {
  nlohmann::json rings = nlohmann::json::array();
  for (const auto& ring : region.rings) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& p : ring) r.push_back({p.lon, p.lat});
    if (!ring.empty()) r.push_back({ring.front().lon, ring.front().lat});
    rings.push_back(r);
  }
  return {{"type", "Polygon"}, {"coordinates", rings}};
}

}  // namespace spatbeta
