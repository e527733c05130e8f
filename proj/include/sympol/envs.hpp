#ifndef SYMPOL_ENVS_HPP
#define SYMPOL_ENVS_HPP

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sympol/action.hpp"
#include "sympol/objects.hpp"
#include "sympol/rng.hpp"

namespace sympol {

struct EnvSpec {
  std::string id;
  int state_dim = 0;
  ActionMode action_mode = ActionMode::continuous;
  int action_dim = 1;
  int horizon = 1;
  std::pair<double, double> reward_range{0.0, 0.0};  // per step
};

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  bool done = false;
  std::map<std::string, double> info;
};

// Episodic environment. Dynamics are pure functions of (state, action) plus
// draws from the env's own seeded stream, so replaying a seed reproduces a
// trajectory bitwise. Continuous actions are clipped to the actuator bounds.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(uint64_t seed) = 0;
  virtual StepResult step(const Action& action) = 0;
  virtual std::vector<double> state() const = 0;
  virtual std::unique_ptr<Env> clone_config() const = 0;  // fresh instance, same configuration
};

std::unique_ptr<Env> make_env(const std::string& id);
std::vector<std::string> env_ids();

// --- Classic control ----------------------------------------------------------

// Cart-pole with force = 10 * clip(a, -1, 1). State (x, x_dot, theta,
// theta_dot), +1 per step, episode ends on |theta| > 12 deg or |x| > 2.4.
class CartPoleContinuousEnv : public Env {
 public:
  CartPoleContinuousEnv();
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::vector<double> state() const override { return state_; }
  std::unique_ptr<Env> clone_config() const override;
  void set_state(std::vector<double> s) { state_ = std::move(s); }

 private:
  EnvSpec spec_;
  std::vector<double> state_;
  Rng rng_{0};
  int t_ = 0;
  bool done_ = true;
};

// Mountain car, continuous throttle. State (position, velocity), reward
// -0.1 a^2 per step and +100 on reaching the goal position.
class MountainCarContinuousEnv : public Env {
 public:
  MountainCarContinuousEnv();
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::vector<double> state() const override { return state_; }
  std::unique_ptr<Env> clone_config() const override;
  void set_state(std::vector<double> s) { state_ = std::move(s); }

 private:
  EnvSpec spec_;
  std::vector<double> state_;
  Rng rng_{0};
  int t_ = 0;
  bool done_ = true;
};

// Torque-limited pendulum swing-up. Observation (cos th, sin th, th_dot),
// reward -(th^2 + 0.1 th_dot^2 + 0.001 u^2).
class PendulumEnv : public Env {
 public:
  PendulumEnv();
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::vector<double> state() const override;
  std::unique_ptr<Env> clone_config() const override;
  void set_angle(double theta, double theta_dot);

 private:
  EnvSpec spec_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  Rng rng_{0};
  int t_ = 0;
  bool done_ = true;
};

// --- ObjectPong -----------------------------------------------------------------

// Minimal arcade: a ball bounces between three walls, a paddle guards the
// right edge. Three discrete actions (up, noop, down). +1 on a paddle hit,
// -1 on a miss; after a miss the ball is hidden for a few frames, then
// re-served from the center at a random angle. The skin variant draws the
// same geometry with shifted intensities plus a small static decoration.
struct ObjectPongSkin {
  double ball_intensity = 1.0;
  double paddle_intensity = 0.5;
  bool decoration = false;
  double decoration_intensity = 0.25;
};

class ObjectPongEnv : public Env {
 public:
  static constexpr int kWidth = 64;
  static constexpr int kHeight = 64;
  static constexpr int kBallSize = 4;
  static constexpr int kPaddleW = 3;
  static constexpr int kPaddleH = 12;
  static constexpr double kPaddleX = 59.0;  // left edge of the paddle
  static constexpr double kBallSpeed = 2.0;
  static constexpr int kPaddleStep = 2;
  static constexpr int kServeDelay = 5;

  explicit ObjectPongEnv(ObjectPongSkin skin = {}, std::string id = "objectpong");
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::vector<double> state() const override;
  std::unique_ptr<Env> clone_config() const override;

  Frame render_frame() const;
  ObjectSet oracle_objects() const;
  bool ball_visible() const { return ball_visible_; }
  const ObjectPongSkin& skin() const { return skin_; }

 private:
  void serve();

  EnvSpec spec_;
  ObjectPongSkin skin_;
  double ball_x_ = 0.0, ball_y_ = 0.0, ball_vx_ = 0.0, ball_vy_ = 0.0;
  double paddle_y_ = 0.0;  // center
  bool ball_visible_ = false;
  int serve_in_ = 0;
  long hits_ = 0, misses_ = 0;
  Rng rng_{0};
  int t_ = 0;
  bool done_ = true;
};

}  // namespace sympol

#endif
