// Renders the three rooms (TV off and on) plus a few test goals to PPM files,
// handy for eyeballing what the agent actually sees.

#include <fstream>
#include <iostream>

#include "grimgep/env.hpp"

using namespace grimgep;

namespace {

void write_ppm(const std::string& path, const Image& img, int scale = 12) {
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << img.width * scale << ' ' << img.height * scale << "\n255\n";
  for (int y = 0; y < img.height * scale; ++y) {
    for (int x = 0; x < img.width * scale; ++x) {
      for (int c = 0; c < 3; ++c) {
        float v = img.at(y / scale, x / scale, c);
        out.put(static_cast<char>(v * 255.0f));
      }
    }
  }
  std::cout << "wrote " << path << '\n';
}

}  // namespace

int main() {
  Environment env;
  EnvState s = env.reset(0);
  write_ppm("room_start.ppm", env.render(s));

  s.room = Room::Object;
  s.object_pos = {0.7, 0.3};
  write_ppm("room_object.ppm", env.render(s));

  s.room = Room::Tv;
  write_ppm("room_tv_off.ppm", env.render(s));

  s.tv_on = true;
  for (std::uint32_t seed : {1u, 2u, 3u}) {
    s.tv_pattern_seed = seed * 123457u;
    s.background_variant = static_cast<int>(seed % 5);
    write_ppm("room_tv_on_" + std::to_string(seed) + ".ppm", env.render(s));
  }

  std::vector<GoalSpec> goals = env.build_test_set();
  write_ppm("goal_00.ppm", goals[0].image);
  write_ppm("goal_07.ppm", goals[7].image);
  write_ppm("goal_24.ppm", goals[24].image);
  return 0;
}
