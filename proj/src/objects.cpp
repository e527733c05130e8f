#include "sympol/objects.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sympol {

OdNoisePreset od_noise_preset(int trained_percent) {
  switch (trained_percent) {
    case 30: return {0.06, 0.4};
    case 50: return {0.04, 0.2};
    case 80: return {0.02, 0.08};
    case 100: return {0.0, 0.0};
    default: throw std::invalid_argument("od_noise_preset: use 30, 50, 80 or 100");
  }
}

namespace {

int quantize_class(double intensity, const std::vector<double>& levels) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < levels.size(); ++i) {
    double d = std::abs(intensity - levels[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

struct Component {
  double sum_x = 0.0, sum_y = 0.0, sum_i = 0.0;
  int min_x = 1 << 30, max_x = -1, min_y = 1 << 30, max_y = -1;
  int area = 0;
};

}  // namespace

ObjectSet extract(const Frame& frame, const ExtractorConfig& cfg) {
  ObjectSet out;
  const int w = frame.width, h = frame.height;
  if (w == 0 || h == 0) return out;

  // per-pixel class labels; -1 below threshold
  std::vector<int> cls(static_cast<size_t>(w) * h, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (frame.at(x, y) >= cfg.intensity_threshold)
        cls[static_cast<size_t>(y) * w + x] = quantize_class(frame.at(x, y), cfg.intensity_levels);

  std::vector<int> label(static_cast<size_t>(w) * h, -1);
  std::vector<Component> comps;
  std::vector<int> comp_class;
  std::vector<std::pair<int, int>> stack;

  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      size_t i0 = static_cast<size_t>(y0) * w + x0;
      if (cls[i0] < 0 || label[i0] >= 0) continue;
      int id = static_cast<int>(comps.size());
      comps.emplace_back();
      comp_class.push_back(cls[i0]);
      stack.clear();
      stack.emplace_back(x0, y0);
      label[i0] = id;
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        Component& c = comps[id];
        c.sum_x += x + 0.5;  // pixel-center convention
        c.sum_y += y + 0.5;
        c.sum_i += frame.at(x, y);
        c.area += 1;
        c.min_x = std::min(c.min_x, x);
        c.max_x = std::max(c.max_x, x);
        c.min_y = std::min(c.min_y, y);
        c.max_y = std::max(c.max_y, y);
        const int dx[] = {1, -1, 0, 0};
        const int dy[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int nx = x + dx[k], ny = y + dy[k];
          if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
          size_t ni = static_cast<size_t>(ny) * w + nx;
          if (cls[ni] == cls[i0] && label[ni] < 0) {
            label[ni] = id;
            stack.emplace_back(nx, ny);
          }
        }
      }
    }
  }

  for (size_t i = 0; i < comps.size(); ++i) {
    const Component& c = comps[i];
    DetectedObject o;
    o.class_id = comp_class[i];
    o.x = c.sum_x / c.area;
    o.y = c.sum_y / c.area;
    o.w = c.max_x - c.min_x + 1;
    o.h = c.max_y - c.min_y + 1;
    o.area = c.area;
    out.objects.push_back(o);
  }

  if (cfg.split_simulation) {
    ObjectSet split;
    for (const auto& o : out.objects) {
      DetectedObject a = o, b = o;
      if (o.w >= o.h) {  // bisect along the wider axis
        a.w = o.w / 2.0;
        b.w = o.w - a.w;
        a.x = o.x - o.w / 2.0 + a.w / 2.0;
        b.x = o.x + o.w / 2.0 - b.w / 2.0;
      } else {
        a.h = o.h / 2.0;
        b.h = o.h - a.h;
        a.y = o.y - o.h / 2.0 + a.h / 2.0;
        b.y = o.y + o.h / 2.0 - b.h / 2.0;
      }
      a.area = o.area / 2.0;
      b.area = o.area / 2.0;
      split.objects.push_back(a);
      split.objects.push_back(b);
    }
    out = std::move(split);
  }

  double max_area = 0.0;
  for (const auto& o : out.objects) max_area = std::max(max_area, o.area);
  for (auto& o : out.objects) o.confidence = max_area > 0.0 ? o.area / max_area : 0.0;
  return out;
}

ObjectSet align_and_velocity(const ObjectSet& prev, const ObjectSet& curr, double max_radius) {
  ObjectSet out = curr;
  for (auto& o : out.objects) {
    o.vx = 0.0;
    o.vy = 0.0;
  }

  struct Pair {
    double dist;
    int ci, pi;
  };
  std::vector<Pair> pairs;
  for (int ci = 0; ci < static_cast<int>(curr.objects.size()); ++ci) {
    for (int pi = 0; pi < static_cast<int>(prev.objects.size()); ++pi) {
      if (curr.objects[ci].class_id != prev.objects[pi].class_id) continue;
      double dx = curr.objects[ci].x - prev.objects[pi].x;
      double dy = curr.objects[ci].y - prev.objects[pi].y;
      double d = std::sqrt(dx * dx + dy * dy);
      if (d <= max_radius) pairs.push_back({d, ci, pi});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.ci != b.ci) return a.ci < b.ci;
    return a.pi < b.pi;
  });
  std::vector<char> used_c(curr.objects.size(), 0), used_p(prev.objects.size(), 0);
  for (const auto& p : pairs) {
    if (used_c[p.ci] || used_p[p.pi]) continue;
    used_c[p.ci] = used_p[p.pi] = 1;
    out.objects[p.ci].vx = curr.objects[p.ci].x - prev.objects[p.pi].x;
    out.objects[p.ci].vy = curr.objects[p.ci].y - prev.objects[p.pi].y;
  }
  return out;
}

FeatureVector featurize(const ObjectSet& objects, const ExtractorConfig& cfg, int frame_w,
                        int frame_h) {
  if (cfg.m_bar < 1) throw std::invalid_argument("featurize: m_bar must be positive");
  std::vector<int> order(objects.objects.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& oa = objects.objects[a];
    const auto& ob = objects.objects[b];
    if (oa.confidence != ob.confidence) return oa.confidence > ob.confidence;
    if (oa.class_id != ob.class_id) return oa.class_id < ob.class_id;
    if (oa.x != ob.x) return oa.x < ob.x;
    if (oa.y != ob.y) return oa.y < ob.y;
    return a < b;
  });

  FeatureVector fv;
  fv.values.assign(static_cast<size_t>(4) * cfg.m_bar, 0.0);
  int kept = std::min<int>(cfg.m_bar, static_cast<int>(order.size()));
  for (int s = 0; s < kept; ++s) {
    const auto& o = objects.objects[order[s]];
    fv.values[4 * s + 0] = o.x / frame_w;
    fv.values[4 * s + 1] = o.y / frame_h;
    fv.values[4 * s + 2] = o.vx / frame_w;
    fv.values[4 * s + 3] = o.vy / frame_h;
    fv.slot_classes.push_back(o.class_id);
  }
  return fv;
}

ObjectSet inject_drop(const ObjectSet& objects, const ExtractorConfig& cfg, Rng& rng) {
  ObjectSet out;
  for (const auto& o : objects.objects) {
    auto it = cfg.drop_probs.find(o.class_id);
    double p = it == cfg.drop_probs.end() ? 0.0 : it->second;
    if (p > 0.0 && rng.bernoulli(p)) continue;
    out.objects.push_back(o);
  }
  return out;
}

ObjectSet inject_noise(const ObjectSet& objects, const ExtractorConfig& cfg, Rng& rng,
                       int frame_w, int frame_h) {
  if (cfg.noise_sigma == 0.0 && cfg.miss_prob == 0.0) return objects;
  ObjectSet out;
  for (const auto& o : objects.objects) {
    if (cfg.miss_prob > 0.0 && rng.bernoulli(cfg.miss_prob)) continue;
    DetectedObject n = o;
    if (cfg.noise_sigma > 0.0) {
      n.x = std::clamp(o.x + rng.normal() * cfg.noise_sigma * frame_w, 0.0, double(frame_w));
      n.y = std::clamp(o.y + rng.normal() * cfg.noise_sigma * frame_h, 0.0, double(frame_h));
    }
    out.objects.push_back(n);
  }
  return out;
}

}  // namespace sympol
