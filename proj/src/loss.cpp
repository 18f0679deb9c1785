#include "voxray/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace voxray {

double cross_entropy(const VecX& logits, int target, VecX* grad_logits) {
  if (grad_logits) *grad_logits = VecX::Zero(logits.size());
  if (target == kIgnore) return 0.0;

  double max = logits.maxCoeff();
  double lse = max + std::log((logits.array() - max).exp().sum());
  if (grad_logits) {
    *grad_logits = (logits.array() - lse).exp();  // softmax
    (*grad_logits)(target) -= 1.0;
  }
  return lse - logits(target);
}

double lovasz_softmax(const MatX& probs, const std::vector<int>& targets,
                      MatX* grad_probs) {
  const int classes = static_cast<int>(probs.rows());
  const int n = static_cast<int>(probs.cols());
  if (grad_probs) *grad_probs = MatX::Zero(classes, n);

  std::vector<int> valid;
  std::vector<bool> present(classes, false);
  for (int i = 0; i < n; ++i) {
    if (targets[i] == kIgnore) continue;
    valid.push_back(i);
    present[targets[i]] = true;
  }
  if (valid.empty()) return 0.0;

  double loss = 0.0;
  int class_count = 0;
  std::vector<double> errors(valid.size());
  std::vector<int> order(valid.size());
  for (int c = 0; c < classes; ++c) {
    if (!present[c]) continue;
    ++class_count;
    for (size_t k = 0; k < valid.size(); ++k) {
      int i = valid[k];
      errors[k] = targets[i] == c ? 1.0 - probs(c, i) : probs(c, i);
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return errors[a] > errors[b];
    });
    // gradient of the Jaccard set function along the sorted errors
    double gts = 0.0;
    for (int k : valid)
      if (targets[k] == c) gts += 1.0;
    double inter = gts, uni = gts;
    double prev_jac = 0.0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
      int i = valid[order[rank]];
      bool fg = targets[i] == c;
      if (fg)
        inter -= 1.0;
      else
        uni += 1.0;
      double jac = 1.0 - inter / uni;
      double g = jac - prev_jac;
      prev_jac = jac;
      loss += errors[order[rank]] * g;
      if (grad_probs) (*grad_probs)(c, i) += fg ? -g : g;
    }
  }
  loss /= class_count;
  if (grad_probs) *grad_probs /= static_cast<double>(class_count);
  return loss;
}

double entropy(const VecX& probs) {
  double h = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    double p = probs(i);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

namespace {

VecX softmax_of(const VecX& logits) {
  VecX shifted = logits.array() - logits.maxCoeff();
  VecX e = shifted.array().exp();
  return e / e.sum();
}

}  // namespace

double term_loss(const MatX& logits, const std::vector<int>& targets,
                 double mu, double nu, MatX* grad_logits) {
  const int classes = static_cast<int>(logits.rows());
  const int n = static_cast<int>(logits.cols());
  if (grad_logits) *grad_logits = MatX::Zero(classes, n);

  int valid = 0;
  for (int i = 0; i < n; ++i)
    if (targets[i] != kIgnore) ++valid;
  if (valid == 0) return 0.0;

  // mean CE over non-ignored targets
  double ce = 0.0;
  MatX probs(classes, n);
  for (int i = 0; i < n; ++i) {
    probs.col(i) = softmax_of(logits.col(i));
    if (targets[i] == kIgnore) continue;
    VecX g;
    ce += cross_entropy(logits.col(i), targets[i],
                        grad_logits ? &g : nullptr);
    if (grad_logits) grad_logits->col(i) += (mu / valid) * g;
  }
  ce /= valid;

  MatX dprobs;
  double lov =
      lovasz_softmax(probs, targets, grad_logits ? &dprobs : nullptr);
  if (grad_logits) {
    // chain through softmax: dl = p .* (g - <g, p>)
    for (int i = 0; i < n; ++i) {
      if (targets[i] == kIgnore) continue;
      const VecX& p = probs.col(i);
      const VecX& g = dprobs.col(i);
      double dot = g.dot(p);
      grad_logits->col(i) += nu * (p.cwiseProduct(g) - dot * p);
    }
  }
  return mu * ce + nu * lov;
}

double total_loss(double l3d_vox, double l3d_nerf, double l2d_nerf,
                  const LossWeights& w, int epoch) {
  return w.beta * l3d_vox + w.gamma(epoch) * l3d_nerf + w.lambda * l2d_nerf;
}

}  // namespace voxray
