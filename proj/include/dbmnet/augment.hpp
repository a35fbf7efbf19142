#pragma once

#include "dbmnet/image.hpp"
#include "dbmnet/rng.hpp"

namespace dbmnet {

// Training-time augmentation. Five candidate transforms, each applied with
// independent probability 0.5, in this order:
//   1. rotation, angle uniform in [-30, +30] degrees
//   2. perspective warp, corner displacement up to 10% of the side
//   3. color jitter: contrast/saturation factors in [0.8, 1.2], hue shift in
//      [-0.05, 0.05]
//   4. Gaussian blur, 3-tap kernel, sigma uniform in [0.1, 1.0]
//   5. random erasing of one rectangle covering 2-10% of the area, filled
//      with uniform noise
// Output is clamped to [0, 1]. Deterministic given the rng state; when every
// gate draw skips, the input is returned bit-identically.
Image augment(const Image& in, Rng& rng);

}  // namespace dbmnet
