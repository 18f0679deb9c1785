#include "voxray/pseudo.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include "voxray/io.hpp"
#include "voxray/loss.hpp"

namespace voxray {

namespace {

std::vector<std::vector<int>> connected_components(const LabelImage& img) {
  const int w = img.width, h = img.height;
  std::vector<int> comp(static_cast<size_t>(w) * h, -1);
  std::vector<std::vector<int>> comps;
  for (int start = 0; start < w * h; ++start) {
    if (comp[start] >= 0 || img.instance_id[start] == 0) continue;
    int id = static_cast<int>(comps.size());
    comps.emplace_back();
    std::queue<int> frontier;
    frontier.push(start);
    comp[start] = id;
    while (!frontier.empty()) {
      int i = frontier.front();
      frontier.pop();
      comps[id].push_back(i);
      int u = i % w, v = i / w;
      const int du[4] = {1, -1, 0, 0}, dv[4] = {0, 0, 1, -1};
      for (int d = 0; d < 4; ++d) {
        int nu = u + du[d], nv = v + dv[d];
        if (nu < 0 || nu >= w || nv < 0 || nv >= h) continue;
        int ni = nv * w + nu;
        if (comp[ni] >= 0) continue;
        if (img.instance_id[ni] != img.instance_id[i]) continue;
        comp[ni] = id;
        frontier.push(ni);
      }
    }
  }
  return comps;
}

std::vector<int> dilate_once(const std::vector<int>& pixels, int w, int h,
                             Rng& rng, double keep_prob) {
  std::vector<char> in(static_cast<size_t>(w) * h, 0);
  for (int p : pixels) in[p] = 1;
  std::vector<int> out = pixels;
  for (int p : pixels) {
    int u = p % w, v = p / w;
    const int du[4] = {1, -1, 0, 0}, dv[4] = {0, 0, 1, -1};
    for (int d = 0; d < 4; ++d) {
      int nu = u + du[d], nv = v + dv[d];
      if (nu < 0 || nu >= w || nv < 0 || nv >= h) continue;
      int ni = nv * w + nu;
      if (in[ni]) continue;
      in[ni] = 1;  // visit each candidate once
      if (rng.uniform(0.0, 1.0) < keep_prob) out.push_back(ni);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> erode_once(const std::vector<int>& pixels, int w, int h,
                            Rng& rng, double keep_prob) {
  std::vector<char> in(static_cast<size_t>(w) * h, 0);
  for (int p : pixels) in[p] = 1;
  std::vector<int> out;
  for (int p : pixels) {
    int u = p % w, v = p / w;
    bool boundary = false;
    const int du[4] = {1, -1, 0, 0}, dv[4] = {0, 0, 1, -1};
    for (int d = 0; d < 4; ++d) {
      int nu = u + du[d], nv = v + dv[d];
      if (nu < 0 || nu >= w || nv < 0 || nv >= h || !in[nv * w + nu]) {
        boundary = true;
        break;
      }
    }
    if (boundary && rng.uniform(0.0, 1.0) < keep_prob)
      continue;  // strip this boundary pixel
    out.push_back(p);
  }
  return out;
}

}  // namespace

SegmentMaskSet oracle_masks(const LabelImage& img, uint64_t seed,
                            int perturbation) {
  SegmentMaskSet set;
  set.width = img.width;
  set.height = img.height;
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 11);
  for (auto& comp : connected_components(img)) {
    std::sort(comp.begin(), comp.end());
    std::vector<int> pixels = comp;
    int steps = perturbation > 0 ? rng.uniform_int(0, perturbation) : 0;
    bool grow = rng.uniform_int(0, 1) != 0;
    for (int s = 0; s < steps; ++s) {
      auto next = grow ? dilate_once(pixels, img.width, img.height, rng, 0.7)
                       : erode_once(pixels, img.width, img.height, rng, 0.7);
      if (next.empty()) break;
      pixels = std::move(next);
    }
    if (pixels.empty()) pixels = comp;
    set.masks.push_back({std::move(pixels)});
  }
  set.results.assign(set.masks.size(), {});
  return set;
}

PixelPseudoLabels confidence_sampler(const RayBundle& bundle,
                                     SegmentMaskSet& masks,
                                     double entropy_threshold) {
  const int w = masks.width, h = masks.height;
  std::vector<int> ray_at(static_cast<size_t>(w) * h, -1);
  for (size_t i = 0; i < bundle.rays.size(); ++i) {
    const auto& rr = bundle.rays[i];
    ray_at[rr.ray.v * w + rr.ray.u] = static_cast<int>(i);
  }

  masks.results.assign(masks.masks.size(), {});
  for (size_t s = 0; s < masks.masks.size(); ++s) {
    SegmentResult& res = masks.results[s];
    std::vector<int> rays;
    for (int p : masks.masks[s].pixels)
      if (ray_at[p] >= 0) rays.push_back(ray_at[p]);
    if (rays.empty()) {
      res.reject = Reject::NoCoverage;
      continue;
    }
    // majority vote over hard per-pixel argmax; ties to the smaller class
    std::vector<int> votes(bundle.classes, 0);
    for (int r : rays) ++votes[bundle.rays[r].argmax];
    int majority = 0;
    for (int c = 1; c < bundle.classes; ++c)
      if (votes[c] > votes[majority]) majority = c;
    res.pseudo_class = majority;
    // mean probabilities over agreeing pixels only
    VecX mean = VecX::Zero(bundle.classes);
    int agree = 0;
    for (int r : rays) {
      if (bundle.rays[r].argmax != majority) continue;
      mean += bundle.rays[r].pixel_probs;
      ++agree;
    }
    mean /= static_cast<double>(agree);
    res.mean_prob = mean;
    res.seg_entropy = entropy(mean);
    if (!(res.seg_entropy < entropy_threshold)) {
      res.reject = Reject::HighEntropy;
      res.pseudo_class = kIgnore;
    }
  }

  PixelPseudoLabels out;
  out.width = w;
  out.height = h;
  out.labels.assign(static_cast<size_t>(w) * h, kIgnore);
  std::vector<double> best_entropy(out.labels.size(), 0.0);
  std::vector<int> owner(out.labels.size(), -1);
  for (size_t s = 0; s < masks.masks.size(); ++s) {
    const SegmentResult& res = masks.results[s];
    if (res.reject != Reject::None) continue;
    for (int p : masks.masks[s].pixels) {
      // lower-entropy segment wins overlaps; first (smaller index) on ties
      if (owner[p] >= 0 && best_entropy[p] <= res.seg_entropy) continue;
      owner[p] = static_cast<int>(s);
      best_entropy[p] = res.seg_entropy;
      out.labels[p] = res.pseudo_class;
    }
  }
  return out;
}

std::vector<int> perspective_baseline(const Scan& scan,
                                      const CameraModel& cam,
                                      const std::vector<int>& point_preds,
                                      const SegmentMaskSet& masks) {
  const int w = masks.width;
  // pixel -> segments containing it (masks may overlap)
  std::vector<std::vector<int>> segs_at(
      static_cast<size_t>(w) * masks.height);
  for (size_t s = 0; s < masks.masks.size(); ++s)
    for (int p : masks.masks[s].pixels)
      segs_at[p].push_back(static_cast<int>(s));

  std::vector<int> point_pixel(scan.size(), -1);
  for (size_t i = 0; i < scan.size(); ++i) {
    auto proj = project_point(cam, scan.points[i]);
    if (!proj) continue;
    point_pixel[i] =
        static_cast<int>(proj->v) * w + static_cast<int>(proj->u);
  }

  // segment majority over projected points' 3D predictions
  std::vector<std::vector<int>> seg_votes(masks.masks.size());
  int classes = 0;
  for (int p : point_preds)
    if (p != kIgnore) classes = std::max(classes, p + 1);
  for (auto& v : seg_votes) v.assign(std::max(classes, 1), 0);
  for (size_t i = 0; i < scan.size(); ++i) {
    if (point_pixel[i] < 0 || point_preds[i] == kIgnore) continue;
    for (int s : segs_at[point_pixel[i]]) ++seg_votes[s][point_preds[i]];
  }
  std::vector<int> seg_label(masks.masks.size(), kIgnore);
  for (size_t s = 0; s < masks.masks.size(); ++s) {
    int best = -1, best_votes = 0;
    for (int c = 0; c < static_cast<int>(seg_votes[s].size()); ++c)
      if (seg_votes[s][c] > best_votes) {
        best = c;
        best_votes = seg_votes[s][c];
      }
    if (best >= 0) seg_label[s] = best;
  }

  std::vector<int> out(scan.size(), kIgnore);
  for (size_t i = 0; i < scan.size(); ++i) {
    if (point_pixel[i] < 0) continue;
    const auto& segs = segs_at[point_pixel[i]];
    if (segs.empty()) continue;
    out[i] = seg_label[segs.front()];  // smallest segment index
  }
  return out;
}

PixelPseudoLabels nosam_pseudolabels(const RayBundle& bundle, int width,
                                     int height, double entropy_threshold) {
  PixelPseudoLabels out;
  out.width = width;
  out.height = height;
  out.labels.assign(static_cast<size_t>(width) * height, kIgnore);
  for (const auto& rr : bundle.rays) {
    if (entropy(rr.pixel_probs) < entropy_threshold)
      out.labels[rr.ray.v * width + rr.ray.u] = rr.argmax;
  }
  return out;
}

void save_masks(const SegmentMaskSet& masks, const std::string& pgm_path,
                const std::string& sidecar_path) {
  std::vector<uint16_t> flat(static_cast<size_t>(masks.width) * masks.height,
                             0);
  std::vector<bool> overlapping(masks.masks.size(), false);
  std::vector<char> taken(flat.size(), 0);
  for (size_t s = 0; s < masks.masks.size(); ++s) {
    for (int p : masks.masks[s].pixels)
      if (taken[p]) overlapping[s] = true;
    if (overlapping[s]) continue;
    for (int p : masks.masks[s].pixels) {
      taken[p] = 1;
      flat[p] = static_cast<uint16_t>(s + 1);
    }
  }
  write_pgm16(pgm_path, masks.width, masks.height, flat);

  bool any_overlap =
      std::any_of(overlapping.begin(), overlapping.end(), [](bool b) { return b; });
  if (sidecar_path.empty()) {
    if (any_overlap)
      throw IoError("overlapping masks require a sidecar path");
    return;
  }
  std::ofstream f(sidecar_path);
  if (!f) throw IoError("cannot write mask sidecar: " + sidecar_path);
  for (size_t s = 0; s < masks.masks.size(); ++s) {
    if (!overlapping[s]) continue;
    f << (s + 1) << ":";
    const auto& px = masks.masks[s].pixels;  // sorted by construction
    size_t i = 0;
    while (i < px.size()) {
      size_t j = i;
      while (j + 1 < px.size() && px[j + 1] == px[j] + 1) ++j;
      f << " " << px[i] << "," << (j - i + 1);
      i = j + 1;
    }
    f << "\n";
  }
}

SegmentMaskSet load_masks(const std::string& pgm_path,
                          const std::string& sidecar_path) {
  SegmentMaskSet set;
  auto flat = read_pgm16(pgm_path, set.width, set.height);
  std::map<int, std::vector<int>> by_id;
  for (size_t p = 0; p < flat.size(); ++p)
    if (flat[p] != 0) by_id[flat[p]].push_back(static_cast<int>(p));

  if (!sidecar_path.empty()) {
    std::ifstream f(sidecar_path);
    if (f) {
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto colon = line.find(':');
        if (colon == std::string::npos)
          throw IoError("bad mask sidecar line: " + line);
        int id = std::stoi(line.substr(0, colon));
        std::istringstream rest(line.substr(colon + 1));
        std::string run;
        std::vector<int> pixels;
        while (rest >> run) {
          auto comma = run.find(',');
          if (comma == std::string::npos)
            throw IoError("bad RLE run in mask sidecar: " + run);
          int start = std::stoi(run.substr(0, comma));
          int len = std::stoi(run.substr(comma + 1));
          for (int k = 0; k < len; ++k) pixels.push_back(start + k);
        }
        by_id[id] = std::move(pixels);
      }
    }
  }
  for (auto& [id, pixels] : by_id) {
    if (pixels.empty()) continue;
    set.masks.push_back({std::move(pixels)});
  }
  set.results.assign(set.masks.size(), {});
  return set;
}

}  // namespace voxray
