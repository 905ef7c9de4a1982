#pragma once

// Brute-force reference metrics used to check the optimized implementations.
// Components come from a queue flood fill over a coordinate set; counts come
// from explicit set intersections.

#include <cstdint>

#include "brainssl/volume.hpp"

namespace brainssl::oracle {

struct Counts {
  int64_t tp = 0, fp = 0, fn = 0;
  double f1 = 0.0;
};

int64_t count_components(const BinaryMask& m, int connectivity);
double dice(const BinaryMask& p, const BinaryMask& g);
Counts lesionwise(const BinaryMask& p, const BinaryMask& g, int connectivity);
int64_t volume_difference(const BinaryMask& p, const BinaryMask& g);
int64_t lesion_count_diff(const BinaryMask& p, const BinaryMask& g, int connectivity);

}  // namespace brainssl::oracle
