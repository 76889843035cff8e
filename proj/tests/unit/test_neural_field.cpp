#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ncmap/neural_field.hpp"
#include "ncmap/synth.hpp"
#include "ncmap/training.hpp"

using namespace ncmap;

namespace {

HashEncodingConfig small_encoding(int levels, int log2) {
  HashEncodingConfig e;
  e.levels = levels;
  e.table_size_log2 = log2;
  return e;
}

MlpConfig small_mlp(int width, int n_f) {
  MlpConfig m;
  m.hidden_width = width;
  m.output_dim = n_f;
  return m;
}

std::vector<UnitPoint> random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_sphere_uniform(n, rng);
}

// Hash-grid encoding computed directly from the table entries.
Eigen::VectorXd reference_encoding(const NeuralCorticalMap& m, const Vec3& p) {
  const auto& e = m.encoding_config();
  Eigen::VectorXd out(e.levels * e.features_per_level);
  for (int l = 0; l < e.levels; ++l) {
    const double res = e.resolution(l);
    const Vec3 x = (p + Vec3::Ones()) * 0.5 * res;
    const Vec3 lo(std::floor(x.x()), std::floor(x.y()), std::floor(x.z()));
    const Vec3 t = x - lo;
    for (int f = 0; f < e.features_per_level; ++f) {
      double acc = 0.0;
      for (int dx = 0; dx < 2; ++dx) {
        for (int dy = 0; dy < 2; ++dy) {
          for (int dz = 0; dz < 2; ++dz) {
            const auto i = static_cast<std::uint64_t>(lo.x()) + static_cast<std::uint64_t>(dx);
            const auto j = static_cast<std::uint64_t>(lo.y()) + static_cast<std::uint64_t>(dy);
            const auto k = static_cast<std::uint64_t>(lo.z()) + static_cast<std::uint64_t>(dz);
            const std::uint64_t h = (i * 1ULL) ^ (j * 2654435761ULL) ^ (k * 805459861ULL);
            const auto idx = static_cast<std::uint32_t>(h % e.table_size());
            const double w = (dx ? t.x() : 1 - t.x()) * (dy ? t.y() : 1 - t.y()) * (dz ? t.z() : 1 - t.z());
            acc += w * m.table_entry(l, idx, f);
          }
        }
      }
      out[l * e.features_per_level + f] = acc;
    }
  }
  return out;
}

// Plain per-point MLP forward pass from the weight/bias accessors.
Eigen::VectorXd reference_forward(const NeuralCorticalMap& m, const Vec3& p) {
  Eigen::VectorXd a = reference_encoding(m, p);
  for (int l = 0; l < m.layer_count(); ++l) {
    a = m.weight(l) * a + m.bias(l);
    if (l + 1 < m.layer_count()) a = a.cwiseMax(0.0);
  }
  return a;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

// Random non-zero tables so the encoding matters.
void randomize_tables(NeuralCorticalMap& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  for (Eigen::Index i = 0; i < m.table_parameter_count(); ++i) m.mutable_parameters()[i] = g(rng);
}

}  // namespace

TEST(NeuralMap, DefaultParameterCount) {
  MlpConfig mlp;
  mlp.output_dim = 2;
  const NeuralCorticalMap m({}, mlp, 0);
  // Tables 12 * 2^14 * 2; layers 24->64, 64->64, 64->2 with biases.
  const std::size_t expected = 12u * 16384u * 2u + (24u * 64u + 64u) + (64u * 64u + 64u) + (64u * 2u + 2u);
  EXPECT_EQ(m.parameter_count(), expected);
  EXPECT_EQ(m.parameter_count(), 399106u);
}

TEST(NeuralMap, Resolutions) {
  const HashEncodingConfig e;
  EXPECT_EQ(e.resolution(0), 4);
  EXPECT_EQ(e.resolution(1), static_cast<int>(std::floor(4 * 1.45)));
  EXPECT_EQ(e.resolution(11), static_cast<int>(std::floor(4 * std::pow(1.45, 11))));
}

TEST(NeuralMap, InvalidConfigs) {
  HashEncodingConfig e;
  e.levels = 0;
  EXPECT_THROW(NeuralCorticalMap(e, {}, 0), InputError);
  MlpConfig m;
  m.hidden_width = 0;
  EXPECT_THROW(NeuralCorticalMap({}, m, 0), InputError);
}

TEST(NeuralMap, EncodingAndForwardMatchReference) {
  NeuralCorticalMap m({}, small_mlp(64, 3), 5);
  randomize_tables(m, 6);
  const auto pts = random_points(700, 7);
  const Eigen::MatrixXd batch = m.evaluate(pts);  // spans two chunks
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_LT(rel_err(m.encode(pts[i]), reference_encoding(m, pts[i].vec())), 1e-13);
    const Eigen::VectorXd ref = reference_forward(m, pts[i].vec());
    EXPECT_LT(rel_err(batch.row(static_cast<Eigen::Index>(i)).transpose(), ref), 1e-12);
  }
}

TEST(NeuralMap, SeededInitializationIsDeterministic) {
  const NeuralCorticalMap a({}, {}, 42), b({}, {}, 42), c({}, {}, 43);
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_NE(a.parameters(), c.parameters());
}

TEST(NeuralMap, ParameterGradientMatchesFiniteDifferences) {
  const double h = 1e-6;
  for (int config = 0; config < 20; ++config) {
    const int n_f = 1 + config % 3;
    NeuralCorticalMap m(small_encoding(3 + config % 4, 8 + config % 3), small_mlp(8 + 4 * (config % 3), n_f),
                        static_cast<std::uint64_t>(config));
    randomize_tables(m, 100 + static_cast<std::uint64_t>(config));
    const auto pts = random_points(16, 200 + static_cast<std::uint64_t>(config));
    Eigen::MatrixXd targets = Eigen::MatrixXd::Random(16, n_f);
    const auto g = m.backward_params(pts, targets);
    EXPECT_NEAR(g.loss, m.mse(pts, targets), 1e-14);

    // Check every nonzero table coordinate plus a sample of the rest.
    std::vector<Eigen::Index> coords;
    for (Eigen::Index i = 0; i < m.table_parameter_count(); ++i) {
      if (g.gradient[i] != 0.0) coords.push_back(i);
    }
    std::mt19937_64 rng(static_cast<std::uint64_t>(config));
    std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(m.parameter_count()) - 1);
    for (int k = 0; k < 60; ++k) coords.push_back(pick(rng));

    Eigen::VectorXd fd(static_cast<Eigen::Index>(coords.size())), an(fd.size());
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const Eigen::Index i = coords[k];
      const double x = m.parameters()[i];
      m.mutable_parameters()[i] = x + h;
      const double up = m.mse(pts, targets);
      m.mutable_parameters()[i] = x - h;
      const double down = m.mse(pts, targets);
      m.mutable_parameters()[i] = x;
      fd[static_cast<Eigen::Index>(k)] = (up - down) / (2 * h);
      an[static_cast<Eigen::Index>(k)] = g.gradient[i];
    }
    EXPECT_LT(rel_err(fd, an), 1e-5) << "config " << config;
  }
}

TEST(NeuralMap, InputGradientMatchesTangentialFiniteDifferences) {
  NeuralCorticalMap m({}, small_mlp(64, 2), 9);
  randomize_tables(m, 10);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  const double h = 1e-7;
  int checked = 0, skipped = 0;
  while (checked < 300) {
    const UnitPoint p = sample_sphere_uniform(1, rng)[0];
    Vec3 t(g(rng), g(rng), g(rng));
    t = (t - t.dot(p.vec()) * p.vec()).normalized();
    auto along = [&](double s) { return m.forward(UnitPoint(p.vec() + s * t)); };
    const Eigen::VectorXd fd = (along(h) - along(-h)) / (2 * h);
    const Eigen::VectorXd fd_half = (along(h / 2) - along(-h / 2)) / h;
    // A cell face or ReLU kink inside the stencil shows up as disagreement.
    if (rel_err(fd, fd_half) > 1e-5) {
      ++skipped;
      continue;
    }
    ++checked;
    EXPECT_LT(rel_err(fd, m.input_gradient(p) * t), 1e-4);
  }
  EXPECT_LT(skipped, 30);
}

TEST(NeuralMap, PullbackMatchesInputGradient) {
  NeuralCorticalMap m({}, small_mlp(32, 2), 12);
  randomize_tables(m, 13);
  const auto pts = random_points(600, 14);
  const Eigen::MatrixXd targets = Eigen::MatrixXd::Random(600, 2);
  const Pullback pb = m.residual_pullback(pts, targets);
  const Eigen::MatrixXd vals = m.evaluate(pts);
  EXPECT_LT((pb.residual - (vals - targets)).norm(), 1e-12);
  for (std::size_t i = 0; i < pts.size(); i += 37) {
    const auto r = static_cast<Eigen::Index>(i);
    const Eigen::RowVector3d ref = pb.residual.row(r) * m.input_gradient(pts[i]);
    EXPECT_LT((pb.vjp.row(r) - ref).norm(), 1e-10 * std::max(1.0, ref.norm()));
  }
}

TEST(NeuralMap, SerializationRoundTrip) {
  NeuralCorticalMap m(small_encoding(4, 10), small_mlp(16, 2), 15);
  randomize_tables(m, 16);
  m.set_channel_names({"sulc", "curv"});
  const auto bytes = m.serialize();
  const auto back = NeuralCorticalMap::deserialize(bytes);
  EXPECT_EQ(back.parameters(), m.parameters());
  EXPECT_EQ(back.channel_names(), m.channel_names());
  EXPECT_EQ(back.serialize(), bytes);
}

TEST(NeuralMap, SerializationErrors) {
  const NeuralCorticalMap m(small_encoding(2, 6), small_mlp(8, 1), 0);
  auto bytes = m.serialize();
  auto bad = bytes;
  bad[5] = '9';
  EXPECT_THROW(NeuralCorticalMap::deserialize(bad), UnsupportedVersion);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(NeuralCorticalMap::deserialize(truncated), ParseError);
}

TEST(NeuralMap, NonFiniteParametersFault) {
  NeuralCorticalMap m(small_encoding(2, 6), small_mlp(8, 1), 0);
  m.bias(m.layer_count() - 1)[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(m.evaluate(random_points(3, 1)), NumericFault);
}

TEST(Training, ConstantFeatureConverges) {
  const auto mesh = make_icosphere(2);
  const FeatureMap feat(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(mesh.vertex_count()), 1, 0.7), {"c"});
  TrainConfig cfg;
  cfg.iterations = 500;
  const auto r = fit(mesh, feat, cfg);
  ASSERT_EQ(r.loss_trace.size(), 500u);
  EXPECT_LT(r.loss_trace.back(), 1e-4);
  EXPECT_EQ(r.map.iterations(), 500u);
}

TEST(Training, DeterministicGivenSeed) {
  const auto s = synth_subject(2, 4, 1, 4, 3);
  TrainConfig cfg;
  cfg.iterations = 20;
  cfg.n_faces = 64;
  cfg.seed = 8;
  const auto a = fit(s.mesh, s.features, cfg, small_encoding(4, 10));
  const auto b = fit(s.mesh, s.features, cfg, small_encoding(4, 10));
  EXPECT_EQ(a.map.serialize(), b.map.serialize());
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Training, LinearRegressionExamples) {
  Eigen::VectorXd x(4), y(4);
  x << 0, 1, 2, 3;
  y << 1, 3, 5, 7;
  const auto f = linear_regression(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.r2, 1.0, 1e-14);
  EXPECT_EQ(linear_regression(x, Eigen::VectorXd::Constant(4, 2.0)).r2, 0.0);
  EXPECT_THROW(linear_regression(Eigen::VectorXd::Constant(4, 1.0), y), UndefinedStatistic);
}

TEST(Training, FidelityOfExactPredictor) {
  const auto s = synth_subject(3, 4, 2, 4, 1);
  const auto eval_mesh = make_icosphere(4);
  const FaceIndex index(s.mesh);
  auto oracle = [&](std::span<const UnitPoint> p) { return interpolate_at(s.mesh, s.features, index, p); };
  for (const auto& f : evaluate_fit_fidelity(oracle, eval_mesh, s.mesh, s.features)) {
    EXPECT_NEAR(f.slope, 1.0, 1e-12);
    EXPECT_NEAR(f.intercept, 0.0, 1e-12);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
  }
}
