// dhvc/schedule.hpp -- linear noise schedule shared by both diffusion stages.
//
// Kept as a plain struct in its own header so the verification oracles can
// use the type without pulling in any diffusion code.
#pragma once

namespace dhvc {

struct NoiseSchedule {
  double beta0 = 0.05;
  double beta1 = 20.0;
};

}  // namespace dhvc
