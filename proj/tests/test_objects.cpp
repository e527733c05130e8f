#include <cmath>

#include <stdexcept>

#include "doctest.h"
#include "sympol/objects.hpp"

using namespace sympol;

namespace {

Frame blank(int w = 64, int h = 64) {
  Frame f;
  f.width = w;
  f.height = h;
  f.pixels.assign(static_cast<size_t>(w) * h, 0.0);
  return f;
}

void fill_rect(Frame& f, int x0, int y0, int w, int h, double v) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) f.at(x, y) = v;
}

ObjectSet one_object(double x, double y, int cls = 0, double conf = 1.0) {
  ObjectSet s;
  DetectedObject o;
  o.class_id = cls;
  o.x = x;
  o.y = y;
  o.w = 4;
  o.h = 4;
  o.area = 16;
  o.confidence = conf;
  s.objects.push_back(o);
  return s;
}

}  // namespace

TEST_CASE("extract: empty frame gives an empty set") {
  ExtractorConfig cfg;
  CHECK(extract(blank(), cfg).objects.empty());
}

TEST_CASE("extract: one block becomes one object at its center") {
  Frame f = blank();
  fill_rect(f, 10, 20, 4, 4, 1.0);
  ExtractorConfig cfg;
  ObjectSet s = extract(f, cfg);
  REQUIRE(s.objects.size() == 1);
  CHECK(s.objects[0].x == doctest::Approx(12.0));
  CHECK(s.objects[0].y == doctest::Approx(22.0));
  CHECK(s.objects[0].w == 4);
  CHECK(s.objects[0].h == 4);
  CHECK(s.objects[0].confidence == 1.0);
  CHECK(s.objects[0].area == 16);
}

TEST_CASE("extract: touching blocks of different intensity stay separate") {
  Frame f = blank();
  fill_rect(f, 10, 20, 4, 4, 1.0);
  fill_rect(f, 14, 20, 4, 4, 0.5);  // adjacent, different class
  ExtractorConfig cfg;
  ObjectSet s = extract(f, cfg);
  CHECK(s.objects.size() == 2);
}

TEST_CASE("extract: split simulation bisects every object") {
  Frame f = blank();
  fill_rect(f, 10, 20, 6, 4, 1.0);
  ExtractorConfig cfg;
  cfg.split_simulation = true;
  ObjectSet s = extract(f, cfg);
  REQUIRE(s.objects.size() == 2);
  const auto& a = s.objects[0];
  const auto& b = s.objects[1];
  // the union of the two half boxes is the original box
  double left = std::min(a.x - a.w / 2, b.x - b.w / 2);
  double right = std::max(a.x + a.w / 2, b.x + b.w / 2);
  double top = std::min(a.y - a.h / 2, b.y - b.h / 2);
  double bottom = std::max(a.y + a.h / 2, b.y + b.h / 2);
  CHECK(left == doctest::Approx(10.0));
  CHECK(right == doctest::Approx(16.0));
  CHECK(top == doctest::Approx(20.0));
  CHECK(bottom == doctest::Approx(24.0));
  CHECK(a.w + b.w == doctest::Approx(6.0));
}

TEST_CASE("align_and_velocity") {
  SUBCASE("static object has zero velocity") {
    ObjectSet prev = one_object(10, 10);
    ObjectSet curr = one_object(10, 10);
    ObjectSet out = align_and_velocity(prev, curr, 16.0);
    CHECK(out.objects[0].vx == 0.0);
    CHECK(out.objects[0].vy == 0.0);
  }
  SUBCASE("movement becomes a finite difference") {
    ObjectSet out = align_and_velocity(one_object(10, 10), one_object(12, 10), 16.0);
    CHECK(out.objects[0].vx == doctest::Approx(2.0));
    CHECK(out.objects[0].vy == 0.0);
  }
  SUBCASE("new objects enter with zero velocity") {
    ObjectSet prev;  // empty
    ObjectSet out = align_and_velocity(prev, one_object(30, 40), 16.0);
    CHECK(out.objects[0].vx == 0.0);
    CHECK(out.objects[0].vy == 0.0);
  }
  SUBCASE("matching respects class identity") {
    ObjectSet prev = one_object(10, 10, 0);
    ObjectSet curr = one_object(12, 10, 1);  // different class, no match
    ObjectSet out = align_and_velocity(prev, curr, 16.0);
    CHECK(out.objects[0].vx == 0.0);
  }
  SUBCASE("matching respects the radius") {
    ObjectSet out = align_and_velocity(one_object(0, 0), one_object(40, 40), 16.0);
    CHECK(out.objects[0].vx == 0.0);
  }
}

TEST_CASE("featurize") {
  ExtractorConfig cfg;
  SUBCASE("vector length is always 4 m_bar") {
    CHECK(featurize(ObjectSet{}, cfg, 64, 64).values.size() == 64);
    ObjectSet two = one_object(16, 32);
    two.objects.push_back(one_object(48, 32).objects[0]);
    CHECK(featurize(two, cfg, 64, 64).values.size() == 64);
  }
  SUBCASE("padding slots are exactly zero") {
    cfg.m_bar = 4;
    ObjectSet two = one_object(16, 32, 0, 1.0);
    two.objects.push_back(one_object(48, 32, 1, 0.5).objects[0]);
    FeatureVector fv = featurize(two, cfg, 64, 64);
    REQUIRE(fv.values.size() == 16);
    for (size_t i = 8; i < 16; ++i) CHECK(fv.values[i] == 0.0);
    CHECK(fv.slot_classes.size() == 2);
    CHECK(fv.values[0] == doctest::Approx(16.0 / 64));
  }
  SUBCASE("top-m_bar filter drops the lowest confidences") {
    ObjectSet many;
    for (int i = 0; i < 20; ++i) {
      DetectedObject o;
      o.class_id = 0;
      o.x = 1.0 + i;  // unique x marks identity
      o.y = 10;
      o.confidence = (20.0 - i) / 20.0;  // descending
      many.objects.push_back(o);
    }
    FeatureVector fv = featurize(many, cfg, 64, 64);
    // the 4 lowest-confidence objects (x = 17, 18, 19, 20) must be absent
    for (int s = 0; s < 16; ++s) CHECK(fv.values[4 * s] * 64 == doctest::Approx(1.0 + s));
  }
  SUBCASE("confidence ties break deterministically") {
    ObjectSet s;
    s.objects = one_object(30, 10, 1, 1.0).objects;
    s.objects.push_back(one_object(20, 10, 0, 1.0).objects[0]);
    FeatureVector fv = featurize(s, cfg, 64, 64);
    CHECK(fv.slot_classes[0] == 0);  // class id wins the tie
    CHECK(fv.values[0] == doctest::Approx(20.0 / 64));
  }
}

TEST_CASE("inject_drop") {
  ExtractorConfig cfg;
  ObjectSet s = one_object(10, 10, 0);
  s.objects.push_back(one_object(20, 20, 1).objects[0]);

  SUBCASE("zero probabilities are the identity") {
    Rng rng(1);
    ObjectSet out = inject_drop(s, cfg, rng);
    CHECK(out.objects.size() == 2);
  }
  SUBCASE("probability one removes the class everywhere") {
    cfg.drop_probs[0] = 1.0;
    Rng rng(2);
    for (int i = 0; i < 10000; ++i) {
      ObjectSet out = inject_drop(s, cfg, rng);
      REQUIRE(out.objects.size() == 1);
      CHECK(out.objects[0].class_id == 1);
    }
  }
  SUBCASE("probability one half survives half the time") {
    cfg.drop_probs[0] = 0.5;
    Rng rng(3);
    int survived = 0;
    for (int i = 0; i < 10000; ++i) {
      ObjectSet out = inject_drop(s, cfg, rng);
      for (const auto& o : out.objects) survived += o.class_id == 0;
    }
    CHECK(std::abs(survived / 10000.0 - 0.5) < 0.02);
  }
}

TEST_CASE("inject_noise presets form a monotone degradation axis") {
  OdNoisePreset p30 = od_noise_preset(30), p50 = od_noise_preset(50), p80 = od_noise_preset(80),
                p100 = od_noise_preset(100);
  CHECK(p30.sigma > p50.sigma);
  CHECK(p50.sigma > p80.sigma);
  CHECK(p80.sigma > p100.sigma);
  CHECK(p100.sigma == 0.0);
  CHECK(p30.miss_prob > p50.miss_prob);
  CHECK(p100.miss_prob == 0.0);
  CHECK_THROWS_AS(od_noise_preset(60), std::invalid_argument);

  ObjectSet s = one_object(32, 32);
  ExtractorConfig cfg;
  cfg.noise_sigma = p30.sigma;
  cfg.miss_prob = p30.miss_prob;
  Rng rng(7);
  int kept = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    kept += static_cast<int>(inject_noise(s, cfg, rng, 64, 64).objects.size());
  CHECK(std::abs(kept / double(n) - 0.6) < 0.02);  // survival = 1 - miss_prob
}
