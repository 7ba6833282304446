// Prints a few phantoms as ASCII art with their class areas and the share of
// texture energy that lies outside the low-pass block.
//
//   phantom_demo [count] [seed]

#include <cstdio>
#include <cstdlib>

#include "frequnet/phantom.hpp"

int main(int argc, char** argv) {
  const std::size_t count = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 2;
  frequnet::PhantomSpec spec;
  if (argc > 2) spec.seed = std::strtoull(argv[2], nullptr, 10);

  for (std::size_t i = 0; i < count; ++i) {
    const frequnet::Sample s = frequnet::generate_phantom(spec, i);
    std::size_t area[8] = {};
    for (auto v : s.label.data) ++area[v];
    std::printf("sample %zu  high-band share %.3f  pixels per class:", i, s.high_band_fraction);
    for (std::size_t k = 0; k < spec.classes(); ++k) std::printf(" %zu", area[k]);
    std::printf("\n");
    // two rows per line keeps the aspect roughly square in a terminal
    for (std::size_t y = 0; y < spec.height; y += 2) {
      for (std::size_t x = 0; x < spec.width; ++x) std::putchar(".o#"[s.label.at(0, y, x) % 3]);
      std::printf("   ");
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double v = s.image.at(0, 0, y, x);
        std::putchar(v < 0.25 ? ' ' : v < 0.75 ? ':' : v < 1.25 ? '+' : '@');
      }
      std::putchar('\n');
    }
  }
  return 0;
}
