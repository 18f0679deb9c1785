#include "voxray/heads.hpp"

#include <fstream>

namespace voxray {

namespace {

void random_matrix(MatX& m, int rows, int cols, Rng& rng) {
  m.resize(rows, cols);
  double scale = std::sqrt(2.0 / cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, scale);
}

}  // namespace

NerfHead NerfHead::init(int feat_dim, int classes, int hidden_dim,
                        uint64_t seed) {
  NerfHead head;
  head.feat_dim = feat_dim;
  head.classes = classes;
  head.hidden_dim = hidden_dim;
  Rng rng(seed);
  random_matrix(head.W1, hidden_dim, feat_dim, rng);
  head.b1 = VecX::Zero(hidden_dim);
  random_matrix(head.W2, classes + 1, hidden_dim, rng);
  head.b2 = VecX::Zero(classes + 1);
  // Start density low so transmittance initially reaches distant cells;
  // otherwise rendering saturates on near empty space and the semantic
  // rendering loss has no gradient path to the geometry. Empty cells have
  // exactly-zero features, so their density stays pinned at the bias.
  head.b2(classes) = -8.0;
  return head;
}

void NerfHeadGrads::init_like(const NerfHead& head) {
  W1 = MatX::Zero(head.W1.rows(), head.W1.cols());
  b1 = VecX::Zero(head.b1.size());
  W2 = MatX::Zero(head.W2.rows(), head.W2.cols());
  b2 = VecX::Zero(head.b2.size());
}

void NerfHeadGrads::zero() {
  W1.setZero();
  b1.setZero();
  W2.setZero();
  b2.setZero();
}

NerfOutput nerf_head_forward(const NerfHead& head, const VecX& feature,
                             NerfSampleCache* cache) {
  VecX hidden = (head.W1 * feature + head.b1).cwiseMax(0.0);
  VecX raw = head.W2 * hidden + head.b2;
  NerfOutput out;
  out.logits = raw.head(head.classes);
  out.density = trunc_exp(raw(head.classes));
  if (cache) {
    cache->feature = feature;
    cache->hidden = hidden;
    cache->raw_density = raw(head.classes);
  }
  return out;
}

VecX nerf_head_backward(const NerfHead& head, const NerfSampleCache& cache,
                        const VecX& dlogits, double ddensity,
                        NerfHeadGrads& grads) {
  VecX draw(head.classes + 1);
  draw.head(head.classes) = dlogits;
  draw(head.classes) = ddensity * trunc_exp_grad(cache.raw_density);

  grads.W2 += draw * cache.hidden.transpose();
  grads.b2 += draw;
  VecX dhidden = head.W2.transpose() * draw;
  for (int i = 0; i < dhidden.size(); ++i)
    if (cache.hidden(i) <= 0.0) dhidden(i) = 0.0;
  grads.W1 += dhidden * cache.feature.transpose();
  grads.b1 += dhidden;
  return head.W1.transpose() * dhidden;
}

VoxHead VoxHead::init(int feat_dim, int classes, uint64_t seed) {
  VoxHead head;
  head.feat_dim = feat_dim;
  head.classes = classes;
  Rng rng(seed);
  random_matrix(head.W, classes, feat_dim, rng);
  head.b = VecX::Zero(classes);
  return head;
}

void VoxHeadGrads::init_like(const VoxHead& head) {
  W = MatX::Zero(head.W.rows(), head.W.cols());
  b = VecX::Zero(head.b.size());
}

void VoxHeadGrads::zero() {
  W.setZero();
  b.setZero();
}

MatX vox_head_forward(const VoxHead& head, const CylGrid& grid) {
  return (head.W * grid.features).colwise() + head.b;
}

std::vector<int> point_slots(const CylGrid& grid, const Scan& scan) {
  std::vector<int> slots(scan.size(), -1);
  for (size_t i = 0; i < scan.size(); ++i) {
    int64_t cell = grid.cell_of(scan.points[i]);
    if (cell >= 0) slots[i] = grid.slot_of(cell);
  }
  return slots;
}

std::vector<int> vox_head_point_predictions(const VoxHead& head,
                                            const CylGrid& grid,
                                            const Scan& scan) {
  MatX logits = vox_head_forward(head, grid);
  auto slots = point_slots(grid, scan);
  std::vector<int> preds(scan.size(), kIgnore);
  for (size_t i = 0; i < scan.size(); ++i) {
    if (slots[i] < 0) continue;
    int best = 0;
    logits.col(slots[i]).maxCoeff(&best);
    preds[i] = best;
  }
  return preds;
}

void vox_head_backward(const VoxHead& head, const CylGrid& grid,
                       const MatX& dlogits, VoxHeadGrads& grads,
                       MatX& feat_grads) {
  grads.W += dlogits * grid.features.transpose();
  grads.b += dlogits.rowwise().sum();
  feat_grads += head.W.transpose() * dlogits;
}

namespace {

void write_linear(std::ostream& f, const MatX& W, const VecX& b) {
  for (int r = 0; r < W.rows(); ++r)
    for (int c = 0; c < W.cols(); ++c) {
      double v = W(r, c);
      f.write(reinterpret_cast<const char*>(&v), 8);
    }
  for (int i = 0; i < b.size(); ++i) {
    double v = b(i);
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
}

void read_linear(std::istream& f, MatX& W, VecX& b) {
  for (int r = 0; r < W.rows(); ++r)
    for (int c = 0; c < W.cols(); ++c) {
      double v;
      f.read(reinterpret_cast<char*>(&v), 8);
      W(r, c) = v;
    }
  for (int i = 0; i < b.size(); ++i) {
    double v;
    f.read(reinterpret_cast<char*>(&v), 8);
    b(i) = v;
  }
}

}  // namespace

void save_nerf_head(const NerfHead& head, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write nerf head: " + path);
  f.write("NRF1", 4);
  int32_t dims[3] = {head.feat_dim, head.classes, head.hidden_dim};
  f.write(reinterpret_cast<const char*>(dims), 12);
  write_linear(f, head.W1, head.b1);
  write_linear(f, head.W2, head.b2);
}

NerfHead load_nerf_head(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read nerf head: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::string(magic, 4) != "NRF1")
    throw IoError("bad nerf head checkpoint: " + path);
  int32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), 12);
  NerfHead head;
  head.feat_dim = dims[0];
  head.classes = dims[1];
  head.hidden_dim = dims[2];
  head.W1.resize(head.hidden_dim, head.feat_dim);
  head.b1.resize(head.hidden_dim);
  head.W2.resize(head.classes + 1, head.hidden_dim);
  head.b2.resize(head.classes + 1);
  read_linear(f, head.W1, head.b1);
  read_linear(f, head.W2, head.b2);
  if (!f) throw IoError("truncated nerf head checkpoint: " + path);
  return head;
}

void save_vox_head(const VoxHead& head, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write vox head: " + path);
  f.write("VOX1", 4);
  int32_t dims[2] = {head.feat_dim, head.classes};
  f.write(reinterpret_cast<const char*>(dims), 8);
  write_linear(f, head.W, head.b);
}

VoxHead load_vox_head(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read vox head: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::string(magic, 4) != "VOX1")
    throw IoError("bad vox head checkpoint: " + path);
  int32_t dims[2];
  f.read(reinterpret_cast<char*>(dims), 8);
  VoxHead head;
  head.feat_dim = dims[0];
  head.classes = dims[1];
  head.W.resize(head.classes, head.feat_dim);
  head.b.resize(head.classes);
  read_linear(f, head.W, head.b);
  if (!f) throw IoError("truncated vox head checkpoint: " + path);
  return head;
}

}  // namespace voxray
