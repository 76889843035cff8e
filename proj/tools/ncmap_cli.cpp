// ncmap: synthesis, fitting, evaluation, registration, ablation and
// benchmarking of neural cortical maps from the command line.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <variant>

#include "cli_support.hpp"
#include "ncmap/ncmap.hpp"

using namespace ncmap;
using namespace ncmap::cli;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

NeuralCorticalMap load_model(const fs::path& path) {
  const Bytes bytes = read_file_bytes(path);
  try {
    return NeuralCorticalMap::deserialize(bytes);
  } catch (const InputError& e) {
    throw InputError("'" + path.string() + "': " + e.what());
  }
}

void save_model(const fs::path& path, const NeuralCorticalMap& map) { write_file_bytes(path, map.serialize()); }

/// Columns of every listed file, side by side.
FeatureMap load_feature_list(const std::string& list, const SphericalMesh& mesh) {
  Eigen::MatrixXd values(static_cast<Eigen::Index>(mesh.vertex_count()), 0);
  std::vector<std::string> names;
  for (const auto& path : parse_list<std::string>(list, "feature list")) {
    const FeatureMap f = load_features(path, mesh.vertex_count());
    const Eigen::Index c0 = values.cols();
    values.conservativeResize(Eigen::NoChange, c0 + f.values.cols());
    values.rightCols(f.values.cols()) = f.values;
    names.insert(names.end(), f.channel_names.begin(), f.channel_names.end());
  }
  return FeatureMap(std::move(values), std::move(names));
}

Parcellation load_parcellation(const fs::path& path, const SphericalMesh& mesh) {
  Parcellation p = read_labels(read_file_text(path));
  if (p.labels.size() != mesh.vertex_count()) {
    throw ShapeError("'" + path.string() + "' has " + std::to_string(p.labels.size()) + " labels, mesh has " +
                     std::to_string(mesh.vertex_count()) + " vertices");
  }
  return p;
}

void write_echo(const fs::path& path, const ConfigEcho& echo) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_file_text(path, echo.text() + "config_hash=" + echo.hash() + "\n");
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

// ---------------------------------------------------------------------------
// Shared flag groups

struct TrainFlags {
  int iterations = 3000;
  int faces = 1024;
  int points_per_face = 4;
  double table_lr = 1e-2;
  double mlp_lr = 1e-3;
  std::uint64_t seed = 0;
  bool uniform_faces = false;
  int levels = 12;
  int features_per_level = 2;
  int table_log2 = 14;
  int base_resolution = 4;
  double growth = 1.45;
  int hidden_layers = 2;
  int hidden_width = 64;

  void add(CLI::App* sub) {
    sub->add_option("--iterations", iterations, "training iterations");
    sub->add_option("--faces", faces, "faces sampled per iteration");
    sub->add_option("--points-per-face", points_per_face, "points sampled per face");
    sub->add_option("--table-lr", table_lr, "Adam learning rate of the hash tables");
    sub->add_option("--mlp-lr", mlp_lr, "Adam learning rate of the MLP");
    sub->add_option("--seed", seed, "initialization and sampling seed");
    sub->add_flag("--uniform-faces", uniform_faces, "sample faces uniformly instead of by area");
    sub->add_option("--levels", levels, "hash encoding levels");
    sub->add_option("--features-per-level", features_per_level);
    sub->add_option("--table-size-log2", table_log2);
    sub->add_option("--base-resolution", base_resolution);
    sub->add_option("--growth-factor", growth);
    sub->add_option("--hidden-layers", hidden_layers);
    sub->add_option("--hidden-width", hidden_width);
  }

  TrainConfig train() const {
    TrainConfig c;
    c.iterations = iterations;
    c.n_faces = faces;
    c.n_points = points_per_face;
    c.table_learning_rate = table_lr;
    c.mlp_learning_rate = mlp_lr;
    c.seed = seed;
    c.face_sampling = uniform_faces ? FaceSampling::uniform : FaceSampling::area_weighted;
    return c;
  }
  HashEncodingConfig encoding() const {
    HashEncodingConfig e;
    e.levels = levels;
    e.features_per_level = features_per_level;
    e.table_size_log2 = table_log2;
    e.base_resolution = base_resolution;
    e.growth_factor = growth;
    return e;
  }
  MlpConfig mlp() const {
    MlpConfig m;
    m.hidden_layers = hidden_layers;
    m.hidden_width = hidden_width;
    return m;
  }
};

struct RegFlags {
  RegConfig cfg;
  std::string strategy = "sa";
  std::string parametrization = "quaternion";
  std::string sampler = "axis_angle_uniform";
  std::string initial = "1,0,0,0";

  // Strategy, parametrization, n_iter and seed are grid axes in ablate.
  void add(CLI::App* sub, bool single_run) {
    if (single_run) {
      sub->add_option("--strategy", strategy, "reset strategy: none, random or sa");
      sub->add_option("--parametrization", parametrization, "quaternion, axis_angle, euler_zyx or six_d");
      sub->add_option("--n-iter", cfg.n_iter, "number of descents");
      sub->add_option("--seed", cfg.seed, "point and reset seed");
    }
    sub->add_option("--n-points", cfg.n_points, "training points");
    sub->add_option("--n-val", cfg.n_val, "validation points");
    sub->add_option("--max-steps", cfg.max_steps, "step cap per descent");
    sub->add_option("--lr", cfg.learning_rate, "Adam learning rate");
    sub->add_option("--adam-beta1", cfg.adam.beta1);
    sub->add_option("--adam-beta2", cfg.adam.beta2);
    sub->add_option("--adam-epsilon", cfg.adam.epsilon);
    sub->add_option("--t-m", cfg.t_m, "stall window length");
    sub->add_option("--stall-tol", cfg.stall_tol, "stall tolerance");
    sub->add_option("--t-diff", cfg.t_diff, "consecutive stalled steps before stopping");
    sub->add_option("--t0", cfg.t0, "initial annealing temperature");
    sub->add_option("--t-min", cfg.t_min, "temperature floor");
    sub->add_option("--alpha-t", cfg.alpha_t, "cooling factor");
    sub->add_option("--n-t-iter", cfg.n_t_iter, "candidates per annealing event");
    sub->add_option("--sampler", sampler, "reset sampler: axis_angle_uniform or haar");
    sub->add_flag("--resample-points", cfg.resample_points, "fresh training points every step");
    sub->add_option("--initial", initial, "initial rotation as quaternion w,x,y,z");
  }

  RegConfig build() const {
    RegConfig c = cfg;
    c.strategy = parse_strategy(strategy);
    c.parametrization = parse_parametrization(parametrization);
    c.sampler = parse_sampler(sampler);
    const auto q = parse_list<double>(initial, "--initial");
    if (q.size() != 4) throw InputError("--initial needs 4 numbers (w,x,y,z)");
    c.initial = Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Worker pool writing results in index order

template <class Job, class Sink>
void run_ordered(std::size_t n, int jobs, Job&& job, Sink&& sink) {
  using Result = std::invoke_result_t<Job&, std::size_t>;
  std::vector<std::optional<Result>> done(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::size_t flushed = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    while (!stop) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        Result r = job(i);
        std::lock_guard lock(mu);
        done[i] = std::move(r);
        while (flushed < n && done[flushed]) {
          sink(flushed, *done[flushed]);
          ++flushed;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
        return;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  int level = 5;
  std::string degrees = "4,12";
  int channels = 0;
  int labels = 8;
  std::uint64_t seed = 0;
  double max_angle = 36.0;
  int subjects = 0;
  double variation = 0.1;
};

void write_subject(const fs::path& dir, const SyntheticSubject& s, const Perturbation* pert, std::uint64_t pert_seed) {
  ensure_dir(dir);
  save_mesh(dir / "mesh.off", s.mesh);
  save_mesh(dir / "mesh.sphere", s.mesh);
  write_file_text(dir / "features.csv", write_features_csv(s.features));
  for (int c = 0; c < s.features.channels(); ++c) {
    write_file_bytes(dir / (s.features.channel_names[static_cast<std::size_t>(c)] + ".curv"),
                     write_freesurfer_curv(s.features, c, s.mesh.face_count()));
  }
  write_file_text(dir / "labels.txt", write_labels(s.parcellation));
  if (!pert) return;
  Json j;
  j["convention"] = "perturbed vertices are R v with R = Rz(yaw) Ry(pitch) Rx(roll)";
  j["seed"] = pert_seed;
  j["roll_deg"] = deg(pert->roll);
  j["yaw_deg"] = deg(pert->yaw);
  j["pitch_deg"] = deg(pert->pitch);
  const Json r = rotation_json(pert->rotation);
  j["quaternion_wxyz"] = r["quaternion_wxyz"];
  j["matrix"] = r["matrix"];
  write_json(dir / "perturbation.json", j);
  const SphericalMesh moved = rotate_mesh(s.mesh, pert->rotation);
  ensure_dir(dir / "perturbed");
  save_mesh(dir / "perturbed" / "mesh.off", moved);
  save_mesh(dir / "perturbed" / "mesh.sphere", moved);
}

int cmd_synth(const SynthArgs& a, const ConfigEcho& echo) {
  if (a.subjects < 0) throw InputError("--subjects must be >= 0");
  if (!(a.max_angle >= 0.0)) throw InputError("--max-angle must be >= 0");
  SynthOptions opt;
  opt.level = a.level;
  opt.degrees = parse_list<int>(a.degrees, "--degrees");
  opt.n_channels = a.channels > 0 ? a.channels : static_cast<int>(opt.degrees.size());
  opt.n_labels = a.labels;
  opt.anatomy_seed = a.seed;
  const fs::path out(a.out);
  ensure_dir(out);
  if (a.subjects == 0) {
    const auto s = synth_subject(opt);
    const std::uint64_t ps = derive_seed(a.seed, 7);
    const Perturbation p = make_perturbation(ps, a.max_angle);
    write_subject(out, s, &p, ps);
  } else {
    write_subject(out / "template", synth_subject(opt), nullptr, 0);
    opt.variation = a.variation;
    for (int k = 0; k < a.subjects; ++k) {
      opt.subject_seed = derive_seed(a.seed, 100 + static_cast<std::uint64_t>(k));
      const std::uint64_t ps = derive_seed(a.seed, 1000 + static_cast<std::uint64_t>(k));
      const Perturbation p = make_perturbation(ps, a.max_angle);
      char name[32];
      std::snprintf(name, sizeof name, "subject_%03d", k);
      write_subject(out / name, synth_subject(opt), &p, ps);
    }
  }
  write_echo(out / "synth.config.txt", echo);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string mesh, features, out;
  TrainFlags train;
};

int cmd_fit(const FitArgs& a, const ConfigEcho& echo) {
  const SphericalMesh mesh = load_mesh(a.mesh);
  const FeatureMap feat = load_feature_list(a.features, mesh);
  const auto t0 = Clock::now();
  const FitResult res = fit(mesh, feat, a.train.train(), a.train.encoding(), a.train.mlp());
  const double secs = seconds_since(t0);
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  const auto bytes = res.map.serialize();
  write_file_bytes(out, bytes);
  std::string csv = "iteration,loss\n";
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) {
    csv += std::to_string(i) + "," + num(res.loss_trace[i]) + "\n";
  }
  write_file_text(with_suffix(out, ".loss.csv"), csv);
  write_echo(with_suffix(out, ".config.txt"), echo);
  const double final_loss = res.loss_trace.empty() ? std::nan("") : res.loss_trace.back();
  std::cout << "parameters: " << res.map.parameter_count() << "\n"
            << "bytes: " << bytes.size() << "\n"
            << "iterations: " << res.map.iterations() << "\n"
            << "final_loss: " << num(final_loss) << "\n"
            << "fit_seconds: " << fixed(secs, 2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-fit

struct EvalArgs {
  std::string model, mesh, features, out;
  int level = 6;
};

int cmd_eval_fit(const EvalArgs& a, const ConfigEcho& echo) {
  const NeuralCorticalMap map = load_model(a.model);
  const SphericalMesh mesh = load_mesh(a.mesh);
  const FeatureMap feat = load_feature_list(a.features, mesh);
  const SphericalMesh eval_mesh = make_icosphere(a.level);
  const auto fits = evaluate_fit_fidelity(map, eval_mesh, mesh, feat);
  const std::string hash = echo.hash();
  std::string csv = "channel,eval_points,slope,intercept,r2,config_hash\n";
  for (std::size_t c = 0; c < fits.size(); ++c) {
    const std::string row = feat.channel_names[c] + "," + std::to_string(eval_mesh.vertex_count()) + "," +
                            num(fits[c].slope) + "," + num(fits[c].intercept) + "," + num(fits[c].r2);
    csv += row + "," + hash + "\n";
    std::cout << row << "\n";
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_file_text(out, csv);
  write_echo(with_suffix(out, ".config.txt"), echo);
  return 0;
}

// ---------------------------------------------------------------------------
// register

using AnyField = std::variant<NeuralField, MeshField>;

struct FieldSide {
  std::optional<SphericalMesh> mesh;
  std::optional<FeatureMap> features;
  std::optional<AnyField> field;
  std::optional<Parcellation> labels;
};

FieldSide load_side(const std::string& model, const std::string& mesh, const std::string& features,
                    const std::string& labels, const std::string& side) {
  FieldSide s;
  if (!mesh.empty()) s.mesh = load_mesh(mesh);
  if (!features.empty()) {
    if (!s.mesh) throw InputError("--" + side + "-features needs --" + side + "-mesh");
    s.features = load_feature_list(features, *s.mesh);
  }
  if (!model.empty()) {
    s.field = NeuralField(load_model(model));
  } else if (s.mesh && s.features) {
    s.field = MeshField(*s.mesh, *s.features);
  } else {
    throw InputError("give --" + side + "-model or --" + side + "-mesh with --" + side + "-features");
  }
  if (!labels.empty()) {
    if (!s.mesh) throw InputError("--" + side + "-labels needs --" + side + "-mesh");
    s.labels = load_parcellation(labels, *s.mesh);
  }
  return s;
}

struct RegisterArgs {
  std::string fixed_model, fixed_mesh, fixed_features, fixed_labels;
  std::string moving_model, moving_mesh, moving_features, moving_labels;
  std::string truth, out;
  bool oracle = false;
  double oracle_step = 10.0;
  bool no_svg = false;
  int report_level = 6;
  RegFlags reg;
};

Json restart_json(const RestartRecord& r) {
  Json j;
  j["started_by"] = std::string(to_string(r.started_by));
  j["start_quaternion_wxyz"] = {r.start.w(), r.start.x(), r.start.y(), r.start.z()};
  j["end_quaternion_wxyz"] = {r.end.w(), r.end.x(), r.end.y(), r.end.z()};
  j["end_loss"] = r.end_loss;
  j["val_loss"] = r.val_loss;
  j["steps"] = r.steps;
  j["stalled"] = r.stalled;
  j["temperature"] = r.temperature;
  return j;
}

int cmd_register(const RegisterArgs& a, const ConfigEcho& echo) {
  const RegConfig cfg = a.reg.build();
  const FieldSide fixed = load_side(a.fixed_model, a.fixed_mesh, a.fixed_features, a.fixed_labels, "fixed");
  const FieldSide moving = load_side(a.moving_model, a.moving_mesh, a.moving_features, a.moving_labels, "moving");
  const bool interp = std::holds_alternative<MeshField>(*fixed.field) && std::holds_alternative<MeshField>(*moving.field);
  std::optional<Rotation> truth;
  if (!a.truth.empty()) truth = read_rotation_json(a.truth);

  const RegistrationResult res = std::visit([&](const auto& f, const auto& m) { return nc_reg(f, m, cfg); },
                                            *fixed.field, *moving.field);
  const Rotation& R = res.rotation;

  // Alignment report: fixed values against the warped moving field.
  const SphericalMesh report_mesh = fixed.mesh ? *fixed.mesh : make_icosphere(a.report_level);
  const std::vector<UnitPoint>& rp = report_mesh.vertices();
  const Eigen::MatrixXd fixed_vals =
      fixed.mesh && fixed.features ? fixed.features->values
                                   : std::visit([&](const auto& f) { return f.evaluate(rp); }, *fixed.field);
  const auto warped_pts = rotate_points(R, rp);
  const Eigen::MatrixXd warped = std::visit([&](const auto& m) { return m.evaluate(warped_pts); }, *moving.field);
  AlignmentReport report;
  report.channels = feature_mse_pcc(fixed_vals, warped);
  report.seconds = res.wall_time;
  std::optional<double> dice;
  if (fixed.labels && moving.labels) {
    dice = dice_score(transfer_labels(*fixed.mesh, *fixed.labels, *moving.mesh, R.inverse()), moving.labels->labels);
    report.dice = *dice;
  }
  const double error_deg = truth ? deg(dist_R(R, *truth)) : std::numeric_limits<double>::quiet_NaN();
  if (truth) report.rotation_error_deg = error_deg;

  const fs::path out(a.out);
  ensure_dir(out);
  const std::string hash = echo.hash();
  Json j;
  j["method"] = interp ? "interp_reg" : "nc_reg";
  j["rotation"] = rotation_json(R);
  j["best_val_loss"] = res.best_val_loss;
  j["best_train_loss"] = res.best_train_loss;
  j["best_descent"] = res.best_index;
  j["descents"] = res.restarts.size();
  j["total_steps"] = res.total_steps;
  j["point_seed"] = res.point_seed;
  j["reset_seed"] = res.reset_seed;
  j["wall_time_seconds"] = res.wall_time;
  j["best_val_trace"] = res.best_val_trace;
  j["temperatures"] = res.temperatures;
  Json restarts = Json::array();
  for (const auto& r : res.restarts) restarts.push_back(restart_json(r));
  j["restarts"] = restarts;
  Json rep;
  rep["points"] = rp.size();
  rep["channels"] = Json::array();
  for (std::size_t c = 0; c < report.channels.size(); ++c) {
    rep["channels"].push_back({{"mse", report.channels[c].mse}, {"pcc", report.channels[c].pcc}});
  }
  rep["mean_mse"] = report.mean_mse();
  rep["mean_pcc"] = report.mean_pcc();
  rep["dice"] = dice ? Json(*dice) : Json(nullptr);
  rep["rotation_error_deg"] = truth ? Json(error_deg) : Json(nullptr);
  j["report"] = rep;
  if (truth) j["truth"] = rotation_json(*truth);
  if (a.oracle) {
    const auto pts = registration_points(cfg).first;
    const OracleResult o = std::visit(
        [&](const auto& f, const auto& m) { return brute_force_oracle(f, m, a.oracle_step, pts); }, *fixed.field,
        *moving.field);
    const double final_energy =
        std::visit([&](const auto& f, const auto& m) { return energy(f, m, R, pts); }, *fixed.field, *moving.field);
    Json oj = rotation_json(o.rotation);
    oj["step_deg"] = a.oracle_step;
    oj["grid_size"] = o.grid_size;
    oj["energy"] = o.energy;
    oj["registration_energy"] = final_energy;
    oj["grid_yaw_deg"] = o.yaw;
    oj["grid_pitch_deg"] = o.pitch;
    oj["grid_roll_deg"] = o.roll;
    j["oracle"] = oj;
  }
  j["config"] = echo.json();
  j["config_hash"] = hash;
  write_json(out / "result.json", j);

  std::string csv = "channel,mse,pcc,dice,rotation_error_deg,seconds,config_hash\n";
  const std::string dice_s = dice ? num(*dice) : "";
  const std::string err_s = truth ? num(error_deg) : "";
  for (std::size_t c = 0; c < report.channels.size(); ++c) {
    csv += std::to_string(c) + "," + num(report.channels[c].mse) + "," + num(report.channels[c].pcc) + "," + dice_s +
           "," + err_s + "," + num(res.wall_time) + "," + hash + "\n";
  }
  write_file_text(out / "report.csv", csv);

  std::string loss = "step,descent,loss\n";
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) {
    loss += std::to_string(i) + "," + std::to_string(res.trace_descent[i]) + "," + num(res.loss_trace[i]) + "\n";
  }
  write_file_text(out / "loss.csv", loss);
  if (!a.no_svg) {
    write_file_text(out / "loss.svg",
                    svg_loss_plot(res.loss_trace, res.trace_descent, "registration loss (" + a.reg.strategy + ")"));
  }
  write_echo(out / "register.config.txt", echo);

  std::cout << "rotation_wxyz: " << num(R.w()) << " " << num(R.x()) << " " << num(R.y()) << " " << num(R.z()) << "\n"
            << "best_val_loss: " << num(res.best_val_loss) << "\n";
  if (truth) std::cout << "rotation_error_deg: " << num(error_deg) << "\n";
  if (dice) std::cout << "dice: " << num(*dice) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string data, out;
  std::string strategies = "none,random,sa";
  std::string parametrizations = "quaternion";
  std::string n_iters = "100";
  std::string seeds = "0,1,2,3,4";
  int fit_iterations = 3000;
  int moving_fit_iterations = 3000;
  int fit_faces = 1024;
  std::uint64_t fit_seed = 0;
  int jobs = 1;
  bool no_pairs = false;
  double success_deg = 1.0;
  RegFlags reg;
};

struct Subject {
  std::string name;
  SphericalMesh mesh;       // perturbed
  FeatureMap features;
  Parcellation labels;
  Rotation perturbation;
  std::shared_ptr<const NeuralCorticalMap> model;           // perturbed
  std::shared_ptr<const NeuralCorticalMap> model_unrotated;  // for pair distances
};

struct RunRow {
  std::string strategy, parametrization, subject;
  int n_iter = 0;
  std::uint64_t seed = 0;
  double error_deg = 0, mse = 0, pcc = 0, dice = 0, dice_before = 0, seconds = 0, best_val_loss = 0;
  int steps = 0, descents = 0;
  std::optional<double> pair_deg;
  bool success = false, worse = false;
};

int cmd_ablate(const AblateArgs& a, const ConfigEcho& echo) {
  const auto strategies = parse_list<std::string>(a.strategies, "--strategies");
  const auto params = parse_list<std::string>(a.parametrizations, "--parametrizations");
  const auto n_iters = parse_list<int>(a.n_iters, "--n-iters");
  const auto seeds = parse_list<std::uint64_t>(a.seeds, "--seeds");
  for (const auto& s : strategies) parse_strategy(s);
  for (const auto& p : params) parse_parametrization(p);
  RegFlags base_flags = a.reg;
  base_flags.build();  // validates the shared flags

  const fs::path data(a.data), out(a.out);
  const fs::path tdir = data / "template";
  const SphericalMesh tmesh = load_mesh(tdir / "mesh.off");
  const FeatureMap tfeat = read_features_csv(read_file_text(tdir / "features.csv"));
  tfeat.check_matches(tmesh);
  const Parcellation tlabels = load_parcellation(tdir / "labels.txt", tmesh);
  std::vector<fs::path> sdirs;
  for (const auto& e : fs::directory_iterator(data)) {
    if (e.is_directory() && e.path().filename().string().rfind("subject_", 0) == 0) sdirs.push_back(e.path());
  }
  std::sort(sdirs.begin(), sdirs.end());
  if (sdirs.empty()) throw InputError("'" + data.string() + "' has no subject_* directories");

  std::vector<Subject> subjects;
  for (const auto& d : sdirs) {
    Subject s;
    s.name = d.filename().string();
    s.mesh = load_mesh(d / "perturbed" / "mesh.off");
    s.features = read_features_csv(read_file_text(d / "features.csv"));
    s.features.check_matches(s.mesh);
    s.labels = load_parcellation(d / "labels.txt", s.mesh);
    s.perturbation = read_rotation_json(d / "perturbation.json");
    subjects.push_back(std::move(s));
  }

  // Model fits: template, then every subject (perturbed, and unrotated when
  // pair distances are wanted).
  ensure_dir(out / "models");
  const fs::path runs_path = out / "runs.csv";
  TrainConfig tcfg;
  tcfg.n_faces = a.fit_faces;
  tcfg.seed = a.fit_seed;
  struct FitJob {
    const SphericalMesh* mesh;
    const FeatureMap* feat;
    int iterations;
    std::string file;
  };
  std::vector<SphericalMesh> unrotated(subjects.size());
  std::vector<FitJob> fit_jobs = {{&tmesh, &tfeat, a.fit_iterations, "template.ncm"}};
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    fit_jobs.push_back({&subjects[k].mesh, &subjects[k].features, a.moving_fit_iterations, subjects[k].name + ".perturbed.ncm"});
    if (!a.no_pairs) {
      unrotated[k] = load_mesh(sdirs[k] / "mesh.off");
      fit_jobs.push_back({&unrotated[k], &subjects[k].features, a.moving_fit_iterations, subjects[k].name + ".ncm"});
    }
  }
  std::vector<std::shared_ptr<const NeuralCorticalMap>> models(fit_jobs.size());
  run_ordered(
      fit_jobs.size(), a.jobs,
      [&](std::size_t i) {
        TrainConfig c = tcfg;
        c.iterations = fit_jobs[i].iterations;
        return std::make_shared<const NeuralCorticalMap>(fit(*fit_jobs[i].mesh, *fit_jobs[i].feat, c).map);
      },
      [&](std::size_t i, const std::shared_ptr<const NeuralCorticalMap>& m) {
        models[i] = m;
        save_model(out / "models" / fit_jobs[i].file, *m);
      });
  const NeuralField template_field(models[0]);
  for (std::size_t k = 0, i = 1; k < subjects.size(); ++k) {
    subjects[k].model = models[i++];
    if (!a.no_pairs) subjects[k].model_unrotated = models[i++];
  }
  const FaceIndex tindex(tmesh);
  std::vector<double> dice_before(subjects.size());
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    dice_before[k] = dice_score(transfer_labels(tmesh, tlabels, tindex, subjects[k].mesh, Rotation()), subjects[k].labels.labels);
  }

  // Grid order: strategy, parametrization, n_iter, seed, subject.
  const std::size_t ns = subjects.size(), nseed = seeds.size(), nn = n_iters.size(), np = params.size();
  const std::size_t total = strategies.size() * np * nn * nseed * ns;
  const std::string hash = echo.hash();
  auto run_one = [&](std::size_t idx) {
    std::size_t r = idx;
    const std::size_t k = r % ns;
    r /= ns;
    const std::uint64_t seed = seeds[r % nseed];
    r /= nseed;
    const int n_iter = n_iters[r % nn];
    r /= nn;
    const std::string& param = params[r % np];
    r /= np;
    const std::string& strategy = strategies[r];
    RegFlags f = base_flags;
    f.strategy = strategy;
    f.parametrization = param;
    f.cfg.n_iter = n_iter;
    f.cfg.seed = derive_seed(seed, k);
    const RegConfig cfg = f.build();
    const Subject& s = subjects[k];
    const NeuralField moving(s.model);
    const RegistrationResult res = nc_reg(template_field, moving, cfg);
    RunRow row;
    row.strategy = strategy;
    row.parametrization = param;
    row.subject = s.name;
    row.n_iter = n_iter;
    row.seed = seed;
    row.error_deg = deg(dist_R(res.rotation, s.perturbation));
    row.success = row.error_deg < a.success_deg;
    const Eigen::MatrixXd warped = moving.evaluate(rotate_points(res.rotation, tmesh.vertices()));
    const auto stats = feature_mse_pcc(tfeat.values, warped);
    for (const auto& c : stats) {
      row.mse += c.mse / static_cast<double>(stats.size());
      row.pcc += c.pcc / static_cast<double>(stats.size());
    }
    row.dice = dice_score(transfer_labels(tmesh, tlabels, tindex, s.mesh, res.rotation.inverse()), s.labels.labels);
    row.dice_before = dice_before[k];
    row.worse = row.dice < row.dice_before;
    row.seconds = res.wall_time;
    row.best_val_loss = res.best_val_loss;
    row.steps = res.total_steps;
    row.descents = static_cast<int>(res.restarts.size());
    if (s.model_unrotated) {
      const RegistrationResult ru = nc_reg(template_field, NeuralField(s.model_unrotated), cfg);
      row.pair_deg = deg(dist_R(ru.rotation, s.perturbation.inverse() * res.rotation));
    }
    return row;
  };

  std::vector<RunRow> rows;
  std::ofstream runs(runs_path, std::ios::binary);
  if (!runs) throw IoError("cannot open '" + runs_path.string() + "' for writing");
  runs << "index,strategy,parametrization,n_iter,seed,subject,error_deg,success,mse,pcc,dice,dice_before,worse,"
          "seconds,steps,descents,best_val_loss,pair_dist_deg,config_hash\n";
  runs.flush();
  run_ordered(total, a.jobs, run_one, [&](std::size_t i, const RunRow& r) {
    runs << i << "," << r.strategy << "," << r.parametrization << "," << r.n_iter << "," << r.seed << "," << r.subject
         << "," << num(r.error_deg) << "," << (r.success ? 1 : 0) << "," << num(r.mse) << "," << num(r.pcc) << ","
         << num(r.dice) << "," << num(r.dice_before) << "," << (r.worse ? 1 : 0) << "," << num(r.seconds) << ","
         << r.steps << "," << r.descents << "," << num(r.best_val_loss) << ","
         << (r.pair_deg ? num(*r.pair_deg) : std::string()) << "," << hash << "\n";
    runs.flush();
    rows.push_back(r);
  });
  runs.close();

  // Per-cell aggregates.
  struct Cell {
    std::string strategy, param;
    int n_iter;
    std::vector<const RunRow*> rows;
  };
  std::vector<Cell> cells;
  for (const auto& st : strategies) {
    for (const auto& p : params) {
      for (int n : n_iters) {
        Cell c{st, p, n, {}};
        for (const auto& r : rows) {
          if (r.strategy == st && r.parametrization == p && r.n_iter == n) c.rows.push_back(&r);
        }
        cells.push_back(std::move(c));
      }
    }
  }
  auto collect = [](const Cell& c, auto field) {
    std::vector<double> v;
    for (const RunRow* r : c.rows) v.push_back(field(*r));
    return v;
  };
  auto ci_cols = [](const MeanCi& m) { return num(m.mean) + "," + num(m.half_width); };
  std::string summary =
      "strategy,parametrization,n_iter,runs,successes,success_rate,error_deg_mean,error_deg_ci,mse_mean,mse_ci,"
      "pcc_mean,pcc_ci,dice_mean,dice_ci,seconds_mean,seconds_ci,worse_count,worst_dice_fraction,max_pair_dist_deg,"
      "config_hash\n";
  std::string table;
  char line[512];
  std::snprintf(line, sizeof line, "%-8s %-12s %6s %9s %18s %18s %18s %10s %10s\n", "strategy", "param", "n_iter",
                "success", "mse", "pcc", "dice", "worse", "max_pair");
  table += line;
  std::vector<Bar> bars;
  for (const auto& c : cells) {
    int successes = 0, worse = 0;
    double max_pair = -1.0;
    for (const RunRow* r : c.rows) {
      successes += r->success;
      worse += r->worse;
      if (r->pair_deg) max_pair = std::max(max_pair, *r->pair_deg);
    }
    const double n = static_cast<double>(c.rows.size());
    const MeanCi err = mean_ci(collect(c, [](const RunRow& r) { return r.error_deg; }));
    const MeanCi mse = mean_ci(collect(c, [](const RunRow& r) { return r.mse; }));
    const MeanCi pcc = mean_ci(collect(c, [](const RunRow& r) { return r.pcc; }));
    const MeanCi dice = mean_ci(collect(c, [](const RunRow& r) { return r.dice; }));
    const MeanCi secs = mean_ci(collect(c, [](const RunRow& r) { return r.seconds; }));
    const std::string pair_s = max_pair >= 0.0 ? num(max_pair) : "";
    summary += c.strategy + "," + c.param + "," + std::to_string(c.n_iter) + "," + std::to_string(c.rows.size()) + "," +
               std::to_string(successes) + "," + num(successes / n) + "," + ci_cols(err) + "," + ci_cols(mse) + "," +
               ci_cols(pcc) + "," + ci_cols(dice) + "," + ci_cols(secs) + "," + std::to_string(worse) + "," +
               num(worse / n) + "," + pair_s + "," + hash + "\n";
    auto pm = [](const MeanCi& m) { return fixed(m.mean, 4) + " +- " + fixed(m.half_width, 4); };
    std::snprintf(line, sizeof line, "%-8s %-12s %6d %4d/%-4zu %18s %18s %18s %4d/%-5zu %10s\n", c.strategy.c_str(),
                  c.param.c_str(), c.n_iter, successes, c.rows.size(), pm(mse).c_str(), pm(pcc).c_str(),
                  pm(dice).c_str(), worse, c.rows.size(), max_pair >= 0.0 ? fixed(max_pair, 3).c_str() : "-");
    table += line;
    bars.push_back({c.strategy + "/" + c.param + "/" + std::to_string(c.n_iter), dice.mean, dice.half_width});
  }
  write_file_text(out / "summary.csv", summary);

  // Paired comparisons against SA (or the first strategy) over (seed, subject).
  const std::string baseline =
      std::find(strategies.begin(), strategies.end(), "sa") != strategies.end() ? "sa" : strategies.front();
  std::string paired = "parametrization,n_iter,strategy,baseline,metric,n,mean_diff,ci_half_width,t,p,config_hash\n";
  table += "\npaired differences (strategy - " + baseline + ", 95% CI):\n";
  for (const auto& p : params) {
    for (int n : n_iters) {
      const Cell* base = nullptr;
      for (const auto& c : cells) {
        if (c.strategy == baseline && c.param == p && c.n_iter == n) base = &c;
      }
      for (const auto& c : cells) {
        if (c.param != p || c.n_iter != n || c.strategy == baseline) continue;
        const std::pair<const char*, double RunRow::*> metrics[] = {
            {"error_deg", &RunRow::error_deg}, {"mse", &RunRow::mse}, {"pcc", &RunRow::pcc}, {"dice", &RunRow::dice}};
        for (const auto& [name, member] : metrics) {
          const auto av = collect(c, [member](const RunRow& r) { return r.*member; });
          const auto bv = collect(*base, [member](const RunRow& r) { return r.*member; });
          const PairedTest t = paired_t_test(av, bv);
          paired += p + "," + std::to_string(n) + "," + c.strategy + "," + baseline + "," + name + "," +
                    std::to_string(av.size()) + "," + num(t.difference.mean) + "," + num(t.difference.half_width) +
                    "," + num(t.t) + "," + num(t.p) + "," + hash + "\n";
          std::snprintf(line, sizeof line, "  %-8s %-12s %6d %-10s %12.5g +- %-12.5g p=%.4g\n", c.strategy.c_str(),
                        p.c_str(), n, name, t.difference.mean, t.difference.half_width, t.p);
          table += line;
        }
      }
    }
  }
  write_file_text(out / "paired.csv", paired);

  std::string pairs = "strategy,parametrization,n_iter,seed,subject,dist_deg\n";
  for (const auto& r : rows) {
    if (!r.pair_deg) continue;
    pairs += r.strategy + "," + r.parametrization + "," + std::to_string(r.n_iter) + "," + std::to_string(r.seed) +
             "," + r.subject + "," + num(*r.pair_deg) + "\n";
  }
  write_file_text(out / "pairs.csv", pairs);
  write_file_text(out / "summary.svg", svg_bar_chart(bars, "Dice after registration (mean, 95% CI)", "Dice"));
  write_file_text(out / "summary.txt", table);
  write_echo(out / "ablate.config.txt", echo);
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string fixed_model, moving_model, out;
  std::string levels = "3,4,5,6";
  int refit_iterations = 200;
  int iterations = 50;
  int points = 4096;
  int repeats = 3;
  std::uint64_t seed = 0;
};

/// Milliseconds per energy+gradient evaluation over one timed batch.
template <FeatureFieldLike M>
double time_per_iteration(const M& moving, const RotationParams& params, std::span<const UnitPoint> pts,
                          const Eigen::MatrixXd& targets, int iterations) {
  double sink = energy_gradient_against(moving, params, pts, targets).energy;  // warm-up
  const auto t0 = Clock::now();
  for (int i = 0; i < iterations; ++i) sink += energy_gradient_against(moving, params, pts, targets).energy;
  const double ms = seconds_since(t0) * 1000.0 / iterations;
  if (!std::isfinite(sink)) throw NumericFault("non-finite energy during benchmark");
  return ms;
}

int cmd_bench(const BenchArgs& a, const ConfigEcho& echo) {
  if (a.iterations < 1 || a.repeats < 1 || a.points < 1) throw InputError("iterations, repeats and points must be >= 1");
  const auto levels = parse_list<int>(a.levels, "--levels");
  const NeuralField fixed_field(load_model(a.fixed_model));
  const NeuralCorticalMap moving_map = load_model(a.moving_model);
  if (fixed_field.channels() != moving_map.channels()) throw ShapeError("fixed and moving models differ in channels");
  Rng rng(derive_seed(a.seed, 0));
  const auto pts = sample_sphere_uniform(static_cast<std::size_t>(a.points), rng);
  const Eigen::MatrixXd targets = fixed_field.evaluate(pts);
  const RotationParams params = from_rotation(sample_rotation(RotationSampler::haar, rng), Parametrization::quaternion);

  struct Level {
    int level;
    std::size_t vertices, faces;
    MeshField interp;
    NeuralField neural;
    double neural_ms = std::numeric_limits<double>::infinity();
    double interp_ms = std::numeric_limits<double>::infinity();
  };
  std::vector<Level> runs;
  for (int level : levels) {
    const SphericalMesh mesh = make_icosphere(level);
    const FeatureMap feat(moving_map.evaluate(mesh.vertices()), moving_map.channel_names());
    std::shared_ptr<const NeuralCorticalMap> neural_map;
    if (a.refit_iterations > 0) {
      TrainConfig c;
      c.iterations = a.refit_iterations;
      c.seed = a.seed;
      neural_map = std::make_shared<const NeuralCorticalMap>(
          fit(mesh, feat, c, moving_map.encoding_config(), moving_map.mlp_config()).map);
    } else {
      neural_map = std::make_shared<const NeuralCorticalMap>(moving_map);
    }
    runs.push_back({level, mesh.vertex_count(), mesh.face_count(), MeshField(mesh, feat), NeuralField(neural_map)});
  }
  // Repeats sweep all levels in turn so slow phases of a noisy machine hit
  // every level alike; each level keeps its fastest repeat.
  for (int r = 0; r < a.repeats; ++r) {
    for (auto& run : runs) {
      run.neural_ms = std::min(run.neural_ms, time_per_iteration(run.neural, params, pts, targets, a.iterations));
      run.interp_ms = std::min(run.interp_ms, time_per_iteration(run.interp, params, pts, targets, a.iterations));
    }
  }

  const std::string hash = echo.hash();
  std::string csv = "level,vertices,faces,points,iterations,neural_ms,interp_ms,ratio,config_hash\n";
  std::cout << "level vertices neural_ms interp_ms ratio\n";
  for (const auto& run : runs) {
    csv += std::to_string(run.level) + "," + std::to_string(run.vertices) + "," + std::to_string(run.faces) + "," +
           std::to_string(a.points) + "," + std::to_string(a.iterations) + "," + num(run.neural_ms) + "," +
           num(run.interp_ms) + "," + num(run.interp_ms / run.neural_ms) + "," + hash + "\n";
    std::cout << run.level << " " << run.vertices << " " << fixed(run.neural_ms, 3) << " " << fixed(run.interp_ms, 3)
              << " " << fixed(run.interp_ms / run.neural_ms, 3) << "\n";
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_file_text(out, csv);
  write_echo(with_suffix(out, ".config.txt"), echo);
  return 0;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"ncmap: neural cortical maps and rotation registration on the sphere"};
  app.set_version_flag("--version", std::string(NCMAP_VERSION));
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "file of key = value lines; command-line flags take precedence");
  };

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "write a synthetic subject or cohort");
  add_config(s_synth);
  s_synth->add_option("--out", synth.out, "output directory")->required();
  s_synth->add_option("--level", synth.level, "icosphere level");
  s_synth->add_option("--degrees", synth.degrees, "harmonic degree per channel, comma-separated");
  s_synth->add_option("--channels", synth.channels, "channel count (0: one per degree)");
  s_synth->add_option("--labels", synth.labels, "parcel count");
  s_synth->add_option("--seed", synth.seed);
  s_synth->add_option("--max-angle", synth.max_angle, "perturbation range in degrees per axis");
  s_synth->add_option("--subjects", synth.subjects, "cohort size (0: a single subject)");
  s_synth->add_option("--variation", synth.variation, "subject-specific feature variation in a cohort");

  FitArgs fitargs;
  auto* s_fit = app.add_subcommand("fit", "train a neural map on a mesh");
  add_config(s_fit);
  s_fit->add_option("--mesh", fitargs.mesh)->required();
  s_fit->add_option("--features", fitargs.features, "feature files (CSV or curv), comma-separated")->required();
  s_fit->add_option("--out", fitargs.out, "model file")->required();
  fitargs.train.add(s_fit);

  EvalArgs evalargs;
  auto* s_eval = app.add_subcommand("eval-fit", "regress model outputs on interpolated reference values");
  add_config(s_eval);
  s_eval->add_option("--model", evalargs.model)->required();
  s_eval->add_option("--mesh", evalargs.mesh)->required();
  s_eval->add_option("--features", evalargs.features)->required();
  s_eval->add_option("--level", evalargs.level, "evaluation icosphere level");
  s_eval->add_option("--out", evalargs.out, "CSV file")->required();

  RegisterArgs regargs;
  auto* s_reg = app.add_subcommand("register", "find the rotation aligning a moving map to a fixed map");
  add_config(s_reg);
  s_reg->add_option("--fixed-model", regargs.fixed_model);
  s_reg->add_option("--fixed-mesh", regargs.fixed_mesh);
  s_reg->add_option("--fixed-features", regargs.fixed_features);
  s_reg->add_option("--fixed-labels", regargs.fixed_labels);
  s_reg->add_option("--moving-model", regargs.moving_model);
  s_reg->add_option("--moving-mesh", regargs.moving_mesh);
  s_reg->add_option("--moving-features", regargs.moving_features);
  s_reg->add_option("--moving-labels", regargs.moving_labels);
  s_reg->add_option("--truth", regargs.truth, "JSON with the true rotation (quaternion_wxyz)");
  s_reg->add_option("--out", regargs.out, "output directory")->required();
  s_reg->add_flag("--oracle", regargs.oracle, "also run the brute-force Euler grid search");
  s_reg->add_option("--oracle-step", regargs.oracle_step, "grid step in degrees");
  s_reg->add_flag("--no-svg", regargs.no_svg);
  s_reg->add_option("--report-level", regargs.report_level, "icosphere level of the report without a fixed mesh");
  regargs.reg.add(s_reg, true);

  AblateArgs ab;
  auto* s_ab = app.add_subcommand("ablate", "run the strategy x parametrization x budget x seed grid");
  add_config(s_ab);
  s_ab->add_option("--data", ab.data, "cohort directory from synth --subjects")->required();
  s_ab->add_option("--out", ab.out, "output directory")->required();
  s_ab->add_option("--strategies", ab.strategies);
  s_ab->add_option("--parametrizations", ab.parametrizations);
  s_ab->add_option("--n-iters", ab.n_iters);
  s_ab->add_option("--seeds", ab.seeds);
  s_ab->add_option("--fit-iterations", ab.fit_iterations, "template fit iterations");
  s_ab->add_option("--moving-fit-iterations", ab.moving_fit_iterations, "subject fit iterations");
  s_ab->add_option("--fit-faces", ab.fit_faces);
  s_ab->add_option("--fit-seed", ab.fit_seed);
  s_ab->add_option("--jobs", ab.jobs, "worker threads");
  s_ab->add_flag("--no-pairs", ab.no_pairs, "skip the unrotated registrations behind pair distances");
  s_ab->add_option("--success-deg", ab.success_deg, "rotation error counted as a success");
  ab.reg.add(s_ab, false);

  BenchArgs bench;
  auto* s_bench = app.add_subcommand("bench", "time energy+gradient of the neural and interpolation paths");
  add_config(s_bench);
  s_bench->add_option("--fixed-model", bench.fixed_model)->required();
  s_bench->add_option("--moving-model", bench.moving_model)->required();
  s_bench->add_option("--levels", bench.levels, "moving-mesh icosphere levels");
  s_bench->add_option("--refit-iterations", bench.refit_iterations, "per-level neural refit (0: reuse the moving model)");
  s_bench->add_option("--iterations", bench.iterations);
  s_bench->add_option("--points", bench.points);
  s_bench->add_option("--repeats", bench.repeats);
  s_bench->add_option("--seed", bench.seed);
  s_bench->add_option("--out", bench.out, "CSV file")->required();

  std::vector<std::string> args = expand_config(argc, argv);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*s_synth) return cmd_synth(synth, echo_options(*s_synth));
  if (*s_fit) return cmd_fit(fitargs, echo_options(*s_fit));
  if (*s_eval) return cmd_eval_fit(evalargs, echo_options(*s_eval));
  if (*s_reg) return cmd_register(regargs, echo_options(*s_reg));
  if (*s_ab) return cmd_ablate(ab, echo_options(*s_ab));
  if (*s_bench) return cmd_bench(bench, echo_options(*s_bench));
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericFault& e) {
    std::cerr << "ncmap: numeric fault: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ncmap: error: " << e.what() << "\n";
    return 1;
  }
}
