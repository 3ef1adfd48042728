#include "mgr/kernels.hpp"

// Anchor translation unit: instantiate the kernel templates for both
// supported precisions so mistakes surface when the library builds.

namespace mgr {

template struct TridiagonalOperator<float>;
template struct TridiagonalOperator<double>;

template void compute_coefficients<float>(std::span<float>,
                                          const GridHierarchy &, std::size_t,
                                          const TileConfig &,
                                          const TilePlan *);
template void compute_coefficients<double>(std::span<double>,
                                           const GridHierarchy &, std::size_t,
                                           const TileConfig &,
                                           const TilePlan *);
template void restore_coefficients<float>(std::span<float>,
                                          const GridHierarchy &, std::size_t,
                                          const TileConfig &,
                                          const TilePlan *);
template void restore_coefficients<double>(std::span<double>,
                                           const GridHierarchy &, std::size_t,
                                           const TileConfig &,
                                           const TilePlan *);
template NdBuffer<float> masstrans_apply<float>(const NdBuffer<float> &,
                                                const GridHierarchy &,
                                                std::size_t, std::size_t, bool,
                                                std::vector<float> *);
template NdBuffer<double> masstrans_apply<double>(const NdBuffer<double> &,
                                                  const GridHierarchy &,
                                                  std::size_t, std::size_t,
                                                  bool, std::vector<double> *);
template void solve_correction<float>(NdBuffer<float> &, const GridHierarchy &,
                                      std::size_t, std::size_t);
template void solve_correction<double>(NdBuffer<double> &,
                                       const GridHierarchy &, std::size_t,
                                       std::size_t);

} // namespace mgr
