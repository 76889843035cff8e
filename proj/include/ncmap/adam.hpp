#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

namespace ncmap {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-10;
};

/// Adam with bias correction. Parameters may be split into contiguous
/// segments that use different learning rates.
class Adam {
 public:
  struct Segment {
    Eigen::Index begin;
    Eigen::Index size;
    double learning_rate;
  };

  Adam() = default;
  Adam(Eigen::Index size, AdamConfig config)
      : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  long steps() const { return t_; }
  void reset() {
    m_.setZero();
    v_.setZero();
    t_ = 0;
  }

  template <class X, class G>
  void step(X& x, const G& g, const std::vector<Segment>& segments) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    m_.array() = config_.beta1 * m_.array() + (1.0 - config_.beta1) * g.array();
    v_.array() = config_.beta2 * v_.array() + (1.0 - config_.beta2) * g.array().square();
    for (const Segment& s : segments) {
      const double lr = s.learning_rate / c1;
      x.segment(s.begin, s.size).array() -=
          lr * m_.segment(s.begin, s.size).array() /
          ((v_.segment(s.begin, s.size).array() / c2).sqrt() + config_.epsilon);
    }
  }

  template <class X, class G>
  void step(X& x, const G& g, double learning_rate) {
    step(x, g, {Segment{0, m_.size(), learning_rate}});
  }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace ncmap
