#pragma once

#include <vector>

#include "voxray/common.hpp"

namespace voxray {

struct LossWeights {
  double beta = 0.5;
  double lambda = 0.1;
  double mu = 3.0;
  double nu = 1.0;
  double gamma0 = 1.0;
  double entropy_threshold = 1.6;  // nats
  int epochs = 1;

  double gamma(int epoch) const {
    return gamma0 * std::max(0.0, 1.0 - static_cast<double>(epoch) / epochs);
  }
};

/// -log softmax(logits)[target]. kIgnore targets contribute 0.
double cross_entropy(const VecX& logits, int target,
                     VecX* grad_logits = nullptr);

/// Lovasz extension of the per-class Jaccard loss, averaged over classes
/// present in `targets`. probs is C x N with rows of each column on the
/// simplex. Optional gradient w.r.t. probs.
double lovasz_softmax(const MatX& probs, const std::vector<int>& targets,
                      MatX* grad_probs = nullptr);

/// Shannon entropy in nats, 0*ln 0 = 0.
double entropy(const VecX& probs);

/// mu * mean CE + nu * Lovasz over a set of predictions given as logits
/// (C x N). kIgnore targets are excluded from both terms. Optional
/// gradient w.r.t. logits.
double term_loss(const MatX& logits, const std::vector<int>& targets,
                 double mu, double nu, MatX* grad_logits = nullptr);

double total_loss(double l3d_vox, double l3d_nerf, double l2d_nerf,
                  const LossWeights& w, int epoch);

}  // namespace voxray
