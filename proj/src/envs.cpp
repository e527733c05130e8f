#include "sympol/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sympol {

namespace {

double clip(double v, double lo, double hi) { return std::clamp(v, lo, hi); }

double continuous_action(const Action& a, double lo, double hi) {
  if (a.mode != ActionMode::continuous || a.values.size() != 1)
    throw std::invalid_argument("env: expected a 1-dimensional continuous action");
  if (!std::isfinite(a.values[0]))
    throw std::invalid_argument("env: non-finite action");
  return clip(a.values[0], lo, hi);
}

void check_not_done(bool done) {
  if (done) throw std::logic_error("env: step() after episode end; call reset()");
}

double angle_normalize(double x) {
  // wrap to [-pi, pi]
  double y = std::fmod(x + M_PI, 2.0 * M_PI);
  if (y < 0) y += 2.0 * M_PI;
  return y - M_PI;
}

}  // namespace

// --- CartPoleContinuous ---------------------------------------------------------

CartPoleContinuousEnv::CartPoleContinuousEnv() {
  spec_ = {"cartpole-cont", 4, ActionMode::continuous, 1, 1000, {0.0, 1.0}};
  state_.assign(4, 0.0);
}

std::vector<double> CartPoleContinuousEnv::reset(uint64_t seed) {
  rng_ = Rng(seed);
  state_.resize(4);
  for (double& v : state_) v = rng_.uniform(-0.05, 0.05);
  t_ = 0;
  done_ = false;
  return state_;
}

StepResult CartPoleContinuousEnv::step(const Action& action) {
  check_not_done(done_);
  const double gravity = 9.8, masscart = 1.0, masspole = 0.1, total_mass = masscart + masspole;
  const double length = 0.5, polemass_length = masspole * length, dt = 0.02;
  const double theta_limit = 12.0 * M_PI / 180.0, x_limit = 2.4;

  double force = 10.0 * continuous_action(action, -1.0, 1.0);
  double x = state_[0], x_dot = state_[1], theta = state_[2], theta_dot = state_[3];
  double costh = std::cos(theta), sinth = std::sin(theta);
  double temp = (force + polemass_length * theta_dot * theta_dot * sinth) / total_mass;
  double theta_acc = (gravity * sinth - costh * temp) /
                     (length * (4.0 / 3.0 - masspole * costh * costh / total_mass));
  double x_acc = temp - polemass_length * theta_acc * costh / total_mass;

  x += dt * x_dot;
  x_dot += dt * x_acc;
  theta += dt * theta_dot;
  theta_dot += dt * theta_acc;
  state_ = {x, x_dot, theta, theta_dot};
  ++t_;

  bool failed = std::abs(x) > x_limit || std::abs(theta) > theta_limit;
  done_ = failed || t_ >= spec_.horizon;
  StepResult r;
  r.next_state = state_;
  r.reward = 1.0;
  r.done = done_;
  r.info["failed"] = failed ? 1.0 : 0.0;
  return r;
}

std::unique_ptr<Env> CartPoleContinuousEnv::clone_config() const {
  return std::make_unique<CartPoleContinuousEnv>();
}

// --- MountainCarContinuous ------------------------------------------------------

MountainCarContinuousEnv::MountainCarContinuousEnv() {
  spec_ = {"mountaincar-cont", 2, ActionMode::continuous, 1, 999, {-0.1, 100.0}};
  state_.assign(2, 0.0);
}

std::vector<double> MountainCarContinuousEnv::reset(uint64_t seed) {
  rng_ = Rng(seed);
  state_ = {rng_.uniform(-0.6, -0.4), 0.0};
  t_ = 0;
  done_ = false;
  return state_;
}

StepResult MountainCarContinuousEnv::step(const Action& action) {
  check_not_done(done_);
  const double power = 0.0015, goal_position = 0.45;
  double a = continuous_action(action, -1.0, 1.0);
  double position = state_[0], velocity = state_[1];

  velocity += a * power - 0.0025 * std::cos(3.0 * position);
  velocity = clip(velocity, -0.07, 0.07);
  position += velocity;
  position = clip(position, -1.2, 0.6);
  if (position <= -1.2 && velocity < 0.0) velocity = 0.0;
  state_ = {position, velocity};
  ++t_;

  bool goal = position >= goal_position;
  done_ = goal || t_ >= spec_.horizon;
  StepResult r;
  r.next_state = state_;
  r.reward = -0.1 * a * a + (goal ? 100.0 : 0.0);
  r.done = done_;
  r.info["goal"] = goal ? 1.0 : 0.0;
  return r;
}

std::unique_ptr<Env> MountainCarContinuousEnv::clone_config() const {
  return std::make_unique<MountainCarContinuousEnv>();
}

// --- Pendulum -------------------------------------------------------------------

PendulumEnv::PendulumEnv() {
  spec_ = {"pendulum", 3, ActionMode::continuous, 1, 200, {-16.2736044, 0.0}};
}

std::vector<double> PendulumEnv::reset(uint64_t seed) {
  rng_ = Rng(seed);
  theta_ = rng_.uniform(-M_PI, M_PI);
  theta_dot_ = rng_.uniform(-1.0, 1.0);
  t_ = 0;
  done_ = false;
  return state();
}

void PendulumEnv::set_angle(double theta, double theta_dot) {
  theta_ = theta;
  theta_dot_ = theta_dot;
  t_ = 0;
  done_ = false;
}

std::vector<double> PendulumEnv::state() const {
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

StepResult PendulumEnv::step(const Action& action) {
  check_not_done(done_);
  const double g = 10.0, m = 1.0, l = 1.0, dt = 0.05, max_torque = 2.0, max_speed = 8.0;
  double u = continuous_action(action, -max_torque, max_torque);

  double th = angle_normalize(theta_);
  double cost = th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u;

  double new_theta_dot =
      theta_dot_ + (3.0 * g / (2.0 * l) * std::sin(theta_) + 3.0 / (m * l * l) * u) * dt;
  new_theta_dot = clip(new_theta_dot, -max_speed, max_speed);
  theta_ += new_theta_dot * dt;
  theta_dot_ = new_theta_dot;
  ++t_;

  done_ = t_ >= spec_.horizon;
  StepResult r;
  r.next_state = state();
  r.reward = -cost;
  r.done = done_;
  return r;
}

std::unique_ptr<Env> PendulumEnv::clone_config() const { return std::make_unique<PendulumEnv>(); }

// --- ObjectPong -----------------------------------------------------------------

ObjectPongEnv::ObjectPongEnv(ObjectPongSkin skin, std::string id) : skin_(skin) {
  spec_ = {std::move(id), 5, ActionMode::discrete, 3, 1000, {-1.0, 1.0}};
}

std::vector<double> ObjectPongEnv::reset(uint64_t seed) {
  rng_ = Rng(seed);
  paddle_y_ = kHeight / 2.0;
  hits_ = 0;
  misses_ = 0;
  t_ = 0;
  done_ = false;
  serve();
  return state();
}

void ObjectPongEnv::serve() {
  ball_x_ = kWidth / 2.0;
  ball_y_ = rng_.uniform(kHeight * 0.25, kHeight * 0.75);
  double angle = rng_.uniform(-0.6, 0.6);
  double dir = rng_.bernoulli(0.5) ? 1.0 : -1.0;
  ball_vx_ = dir * kBallSpeed * std::cos(angle);
  ball_vy_ = kBallSpeed * std::sin(angle);
  ball_visible_ = true;
  serve_in_ = 0;
}

std::vector<double> ObjectPongEnv::state() const {
  return {ball_x_, ball_y_, ball_vx_, ball_vy_, paddle_y_};
}

StepResult ObjectPongEnv::step(const Action& action) {
  check_not_done(done_);
  if (action.mode != ActionMode::discrete || action.index < 0 || action.index > 2)
    throw std::invalid_argument("objectpong: expected a discrete action in {0, 1, 2}");

  // 0 = up, 1 = noop, 2 = down
  if (action.index == 0) paddle_y_ -= kPaddleStep;
  if (action.index == 2) paddle_y_ += kPaddleStep;
  paddle_y_ = clip(paddle_y_, kPaddleH / 2.0, kHeight - kPaddleH / 2.0);

  double reward = 0.0;
  const double r = kBallSize / 2.0;
  if (!ball_visible_) {
    if (--serve_in_ <= 0) serve();
  } else {
    ball_x_ += ball_vx_;
    ball_y_ += ball_vy_;
    if (ball_y_ < r) {
      ball_y_ = 2.0 * r - ball_y_;
      ball_vy_ = -ball_vy_;
    }
    if (ball_y_ > kHeight - r) {
      ball_y_ = 2.0 * (kHeight - r) - ball_y_;
      ball_vy_ = -ball_vy_;
    }
    if (ball_x_ < r) {
      ball_x_ = 2.0 * r - ball_x_;
      ball_vx_ = -ball_vx_;
    }
    if (ball_vx_ > 0.0 && ball_x_ + r >= kPaddleX) {
      if (std::abs(ball_y_ - paddle_y_) <= (kPaddleH + kBallSize) / 2.0) {
        ball_x_ = 2.0 * (kPaddleX - r) - ball_x_;
        ball_vx_ = -ball_vx_;
        reward = 1.0;
        ++hits_;
      } else if (ball_x_ - r > kWidth) {
        reward = -1.0;
        ++misses_;
        ball_visible_ = false;
        serve_in_ = kServeDelay;
      }
    }
  }

  ++t_;
  done_ = t_ >= spec_.horizon;
  StepResult res;
  res.next_state = state();
  res.reward = reward;
  res.done = done_;
  res.info["hits"] = static_cast<double>(hits_);
  res.info["misses"] = static_cast<double>(misses_);
  return res;
}

Frame ObjectPongEnv::render_frame() const {
  Frame f;
  f.width = kWidth;
  f.height = kHeight;
  f.pixels.assign(static_cast<size_t>(kWidth) * kHeight, 0.0);

  auto draw_rect = [&f](double cx, double cy, int w, int h, double intensity) {
    int x0 = static_cast<int>(std::lround(cx - w / 2.0));
    int y0 = static_cast<int>(std::lround(cy - h / 2.0));
    for (int y = std::max(0, y0); y < std::min(kHeight, y0 + h); ++y)
      for (int x = std::max(0, x0); x < std::min(kWidth, x0 + w); ++x) f.at(x, y) = intensity;
  };

  if (skin_.decoration) draw_rect(3.5, 57.0, 3, 2, skin_.decoration_intensity);
  draw_rect(kPaddleX + kPaddleW / 2.0, paddle_y_, kPaddleW, kPaddleH, skin_.paddle_intensity);
  if (ball_visible_) draw_rect(ball_x_, ball_y_, kBallSize, kBallSize, skin_.ball_intensity);
  return f;
}

ObjectSet ObjectPongEnv::oracle_objects() const {
  ObjectSet out;
  if (ball_visible_) {
    DetectedObject ball;
    ball.class_id = 0;
    ball.x = ball_x_;
    ball.y = ball_y_;
    ball.w = kBallSize;
    ball.h = kBallSize;
    ball.area = kBallSize * kBallSize;
    ball.confidence = 1.0;
    out.objects.push_back(ball);
  }
  DetectedObject paddle;
  paddle.class_id = 1;
  paddle.x = kPaddleX + kPaddleW / 2.0;
  paddle.y = paddle_y_;
  paddle.w = kPaddleW;
  paddle.h = kPaddleH;
  paddle.area = kPaddleW * kPaddleH;
  paddle.confidence = 1.0;
  out.objects.push_back(paddle);
  return out;
}

std::unique_ptr<Env> ObjectPongEnv::clone_config() const {
  return std::make_unique<ObjectPongEnv>(skin_, spec_.id);
}

// --- Factory --------------------------------------------------------------------

std::unique_ptr<Env> make_env(const std::string& id) {
  if (id == "cartpole-cont") return std::make_unique<CartPoleContinuousEnv>();
  if (id == "mountaincar-cont") return std::make_unique<MountainCarContinuousEnv>();
  if (id == "pendulum") return std::make_unique<PendulumEnv>();
  if (id == "objectpong") return std::make_unique<ObjectPongEnv>();
  if (id == "objectpong-skin2") {
    ObjectPongSkin skin;
    skin.ball_intensity = 0.75;
    skin.paddle_intensity = 0.6;
    skin.decoration = true;
    skin.decoration_intensity = 0.25;
    return std::make_unique<ObjectPongEnv>(skin, "objectpong-skin2");
  }
  throw std::invalid_argument("make_env: unknown env id '" + id + "'");
}

std::vector<std::string> env_ids() {
  return {"cartpole-cont", "mountaincar-cont", "pendulum", "objectpong", "objectpong-skin2"};
}

}  // namespace sympol
