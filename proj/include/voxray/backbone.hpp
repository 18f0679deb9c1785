#pragma once

#include <string>
#include <vector>

#include "voxray/grid.hpp"
#include "voxray/scene.hpp"

namespace voxray {

/// Per-voxel 2-layer MLP over pooled point statistics, followed by one
/// fixed 6-neighbor feature averaging step weighted by kappa.
struct MiniVoxNet {
  static constexpr int kStatsDim = 8;
  int hidden_dim = 32;
  int feat_dim = 16;
  double kappa = 0.3;

  MatX W1;  // hidden_dim x kStatsDim
  VecX b1;
  MatX W2;  // feat_dim x hidden_dim
  VecX b2;

  static MiniVoxNet init(int hidden_dim, int feat_dim, double kappa,
                         uint64_t seed);
};

struct MiniVoxNetGrads {
  MatX W1, W2;
  VecX b1, b2;
  void init_like(const MiniVoxNet& net);
  void zero();
};

struct BackboneCache {
  MatX stats;    // kStatsDim x occupied
  MatX hidden;   // post-ReLU, hidden_dim x occupied
  MatX premix;   // MLP output before neighbor averaging, feat_dim x occupied
  std::vector<std::vector<int>> neighbors;  // occupied 6-neighbor slots
};

/// Pooled statistics per occupied cell: mean Cartesian offset from the
/// cell center (3), offset covariance diagonal (3), mean intensity (1),
/// log point count (1).
void compute_cell_stats(const CylGrid& grid, const Scan& scan, MatX& stats);

/// Fills grid.features. `cache` is required for the backward pass.
void backbone_forward(const MiniVoxNet& net, CylGrid& grid, const Scan& scan,
                      BackboneCache* cache = nullptr);

/// Exact gradients of backbone_forward w.r.t. the MLP weights. Throws
/// IoError-free std::logic_error when the cache is missing/mismatched.
void backbone_backward(const MiniVoxNet& net, const CylGrid& grid,
                       const BackboneCache& cache, const MatX& feat_grads,
                       MiniVoxNetGrads& grads);

void save_backbone(const MiniVoxNet& net, const std::string& path);
MiniVoxNet load_backbone(const std::string& path);

}  // namespace voxray
