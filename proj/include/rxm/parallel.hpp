#pragma once

namespace rxm::parallel {

// Worker count used by the kernels. 1 is the single-lane mode. Every kernel
// partitions work so that each output element is produced by exactly one lane
// in a fixed order, so results do not depend on this setting.
void set_num_threads(int threads);
int num_threads();

}  // namespace rxm::parallel
