#ifndef SYMPOL_OBJECTS_HPP
#define SYMPOL_OBJECTS_HPP

#include <map>
#include <vector>

#include "sympol/rng.hpp"

namespace sympol {

// Grayscale frame, row-major, values in [0, 1].
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
};

struct DetectedObject {
  int class_id = 0;
  double x = 0.0;  // centroid, pixel units
  double y = 0.0;
  double w = 0.0;  // bounding box
  double h = 0.0;
  double confidence = 1.0;
  double vx = 0.0;  // pixels per step, filled by align_and_velocity
  double vy = 0.0;
  double area = 0.0;  // pixel count
};

struct ObjectSet {
  std::vector<DetectedObject> objects;
};

enum class ExtractorMode { oracle, connected_components };

struct ExtractorConfig {
  ExtractorMode mode = ExtractorMode::connected_components;
  int m_bar = 16;
  double intensity_threshold = 0.1;
  // class identity of a component = index of the nearest of these levels
  std::vector<double> intensity_levels = {0.25, 0.5, 0.75, 1.0};
  std::map<int, double> drop_probs;  // class_id -> drop probability
  bool split_simulation = false;
  // under-fitted detector emulation
  double noise_sigma = 0.0;  // centroid jitter, fraction of frame size
  double miss_prob = 0.0;    // per-object miss probability
  double match_radius_frac = 0.25;  // alignment radius, fraction of frame width
};

// Presets emulating a detector trained to 30/50/80/100%: (sigma, miss prob).
struct OdNoisePreset {
  double sigma = 0.0;
  double miss_prob = 0.0;
};
OdNoisePreset od_noise_preset(int trained_percent);

// Connected components (4-connectivity) of pixels above the intensity
// threshold, grouped by quantized intensity class so touching objects with
// different intensities stay separate. Confidence = area / largest area.
ObjectSet extract(const Frame& frame, const ExtractorConfig& cfg);

// Greedy nearest-neighbor matching within class between consecutive frames.
// Matched objects receive per-step velocities; unmatched ones get zero.
ObjectSet align_and_velocity(const ObjectSet& prev, const ObjectSet& curr, double max_radius);

struct FeatureVector {
  std::vector<double> values;  // length exactly 4 * m_bar
  std::vector<int> slot_classes;  // class per filled slot
};

// Top-m_bar objects by confidence (ties: class_id, then x, then y), four
// features per slot (x, y, vx, vy) normalized by frame size, zero padding.
FeatureVector featurize(const ObjectSet& objects, const ExtractorConfig& cfg, int frame_w,
                        int frame_h);

// Each object independently removed with its class drop probability.
ObjectSet inject_drop(const ObjectSet& objects, const ExtractorConfig& cfg, Rng& rng);

// Centroid jitter and misses per the noise knobs; clamps positions in frame.
ObjectSet inject_noise(const ObjectSet& objects, const ExtractorConfig& cfg, Rng& rng,
                       int frame_w, int frame_h);

}  // namespace sympol

#endif
