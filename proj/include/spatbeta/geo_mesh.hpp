#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseCore>
#include "json.hpp"

namespace spatbeta {

// Planar (lon, lat) coordinate in degrees.
struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
  friend bool operator==(const LonLat&, const LonLat&) = default;
};

// Polygonal region: rings[0] is the outer boundary, the rest are holes.
// Rings are stored open (the first vertex is not repeated at the end).
struct Region {
  std::vector<std::vector<LonLat>> rings;

  // Throws InvalidRegion when a ring has fewer than three distinct
  // vertices, self-intersects, a hole escapes the outer ring, or the
  // enclosed area is zero.
  void validate() const;
  double area() const;
  bool contains(LonLat p) const;
  // {min lon, min lat, max lon, max lat}
  std::array<double, 4> bounds() const;

  static Region rectangle(double lon0, double lat0, double lon1, double lat1);
};

using Triangle = std::array<int, 3>;

struct TriMesh {
  std::vector<LonLat> vertices;
  std::vector<Triangle> triangles;  // counter-clockwise
  Region region;

  int size() const { return static_cast<int>(triangles.size()); }
  LonLat centroid(int t) const;
  double signed_area(int t) const;
};

// Adjacency lists A_i of the triangles, sorted ascending.
struct NeighborGraph {
  std::vector<std::vector<int>> adjacency;
  std::vector<int> degree;

  int size() const { return static_cast<int>(adjacency.size()); }
  static NeighborGraph from_edges(int n, const std::vector<std::pair<int, int>>& edges);
};

struct Components {
  int count = 0;
  std::vector<int> label;  // component id per node, numbered by first appearance
};

Components connected_components(const NeighborGraph& graph);

struct PrecisionEntry {
  int row;
  int col;
  double value;
};

// Q_ii = |A_i|, Q_ij = -1 for j in A_i; zero entries are not stored.
// Entries are ordered by (row, col).
struct SparsePrecision {
  int dimension = 0;
  std::vector<PrecisionEntry> entries;

  Eigen::SparseMatrix<double> to_eigen() const;
  // x' Q x
  double quadratic_form(const Eigen::VectorXd& x) const;
};

// Deterministic mesh of a region: a jittered regular grid sized for the
// requested triangle count is Delaunay-triangulated and triangles whose
// centroid falls outside the region are discarded. Grid points on the
// bounding box stay fixed so convex rectangles are tiled exactly.
TriMesh build_mesh(const Region& region, int target_triangles, std::uint64_t seed);

// Delaunay triangulation of a point set (Bowyer-Watson). Output
// triangles are counter-clockwise and index into `points`.
std::vector<Triangle> delaunay(const std::vector<LonLat>& points);

// Index of the lowest-numbered triangle containing (lon, lat), boundary
// inclusive.
std::optional<int> locate_point(const TriMesh& mesh, double lon, double lat);

// Triangles are neighbors iff they share at least one vertex.
NeighborGraph build_neighbor_graph(const TriMesh& mesh);

SparsePrecision precision_matrix(const NeighborGraph& graph);

// Text format: one `v lon lat` line per vertex, then one `t i j k` line
// per triangle (0-based).
void write_mesh(std::ostream& out, const TriMesh& mesh);
TriMesh read_mesh(std::istream& in);

// Triangles as GeoJSON Polygon features with a `tri_id` property plus the
// per-triangle properties given (one object per triangle, may be empty).
nlohmann::json mesh_geojson(const TriMesh& mesh,
                            const std::vector<nlohmann::json>& properties = {});

// Accepts a GeoJSON Polygon geometry, Feature, or FeatureCollection whose
// first feature is a Polygon.
Region read_region_geojson(std::istream& in);
nlohmann::json region_geojson(const Region& region);

}  // namespace spatbeta
