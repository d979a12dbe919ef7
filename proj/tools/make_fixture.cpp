// Writes the synthetic fixture used by the end-to-end tests.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "spatbeta/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic provider/tax fixture"};
  std::string dir;
  spatbeta::FixtureOptions options;
  app.add_option("dir", dir, "output directory")->required();
  app.add_option("--zips", options.zips, "number of zip codes");
  app.add_option("--providers", options.providers, "number of provider rows");
  app.add_option("--seed", options.seed, "random seed");
  CLI11_PARSE(app, argc, argv);
  spatbeta::write_fixture(dir, options);
  std::cout << "fixture written to " << dir << '\n';
  return 0;
}
