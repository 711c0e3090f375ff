#include "tunalab/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "tunalab/binio.hpp"
#include "tunalab/codec.hpp"
#include "tunalab/collapse.hpp"
#include "tunalab/json_codec.hpp"
#include "tunalab/metrics.hpp"
#include "tunalab/service.hpp"

namespace tunalab {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path model_dir() {
  const char* d = std::getenv("TUNALAB_MODEL_DIR");
  return d ? fs::path(d) : fs::path();
}

// Relative paths that do not exist here are looked up in TUNALAB_MODEL_DIR.
fs::path resolve_input(const std::string& given, const char* flag, const char* fallback_name) {
  const fs::path dir = model_dir();
  if (given.empty()) {
    if (fallback_name == nullptr || dir.empty())
      throw UsageError(std::string(flag) + " is required" + (fallback_name ? " (or set TUNALAB_MODEL_DIR)" : ""));
    return dir / fallback_name;
  }
  fs::path p(given);
  if (p.is_relative() && !fs::exists(p) && !dir.empty() && fs::exists(dir / p)) return dir / p;
  return p;
}

void parse_delta(const std::string& text, AttributeDeltas& deltas) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw UsageError("--delta expects NAME=VALUE, got '" + text + "'");
  const std::string name = text.substr(0, eq);
  std::string_view v(text);
  v.remove_prefix(eq + 1);
  if (!v.empty() && v.front() == '+') v.remove_prefix(1);
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) throw UsageError("--delta value for '" + name + "' is not a number");
  try {
    attribute_from_name(name);
  } catch (const InvalidArgument& e) {
    throw UsageError(std::string("--delta: ") + e.what());
  }
  deltas[name] = x;

}

std::string trajectory_csv(const Trajectory& t) {
  std::ostringstream os;
  os << "step,alpha_or_iter";
  const std::size_t dim = t.points.empty() ? 0 : t.points.front().values.size();
  for (std::size_t i = 0; i < dim; ++i) os << ",latent_" << i;
  for (auto name : kAttributeNames) os << ',' << name;
  os << ",displacement\n";
  const auto disp = t.displacements();
  for (std::size_t k = 0; k < t.points.size(); ++k) {
    os << k << ',' << format_number(t.coefficients[k]);
    for (double x : t.points[k].values) os << ',' << format_number(x);
    for (std::size_t j = 0; j < kAttributeCount; ++j) os << ',' << format_number(t.readouts[k].get(AttributeId(j)));
    os << ',' << format_number(disp[k]) << '\n';
  }
  return os.str();
}

void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

ModelSet load_models(const std::vector<std::string>& paths) {
  ModelSet set;
  for (const auto& p : paths) set.add(load_feature_model(resolve_input(p, "--fm", nullptr)));
  return set;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tunalab: latent-space editing laboratory on a synthetic face world", "tunalab"};
  app.require_subcommand(1);
  std::function<void()> action;

  // train-generator
  auto* train = app.add_subcommand("train-generator", "train the mapping + synthesis generator");
  struct {
    std::uint64_t seed = 1;
    std::size_t epochs = GeneratorHyper{}.epochs;
    double beta = GeneratorHyper{}.beta;
    std::size_t samples = GeneratorHyper{}.samples;
    std::string out;
  } tg;
  train->add_option("--seed", tg.seed, "random seed");
  train->add_option("--epochs", tg.epochs, "training epochs")->check(CLI::PositiveNumber);
  train->add_option("--beta", tg.beta, "weight of the attribute probe loss")->check(CLI::NonNegativeNumber);
  train->add_option("--samples", tg.samples, "world samples (80/20 train/validation)")->check(CLI::PositiveNumber);
  train->add_option("--out", tg.out, "output model file")->required();
  train->callback([&] {
    action = [&] {
      GeneratorHyper h;
      h.epochs = tg.epochs;
      h.beta = tg.beta;
      h.samples = tg.samples;
      Rng rng(tg.seed);
      const auto res = train_generator(WorldConfig{}, h, rng);
      save_generator(tg.out, res.bundle);
      out << "validation pixel mse " << format_number(res.validation.pixel_mse) << "\nprobe accuracy "
          << format_number(res.validation.probe_accuracy) << "\nwrote " << tg.out << '\n';
    };
  });

  // fit
  auto* fit = app.add_subcommand("fit", "fit a latent-to-attribute model on generated samples");
  struct {
    std::string space = "w", kind = "linear", model, out, head = "logistic";
    std::uint64_t seed = 1;
    std::size_t samples = 0;
    bool balance = false;
  } ft;
  fit->add_option("--space", ft.space, "z or w")->check(CLI::IsMember({"z", "w"}));
  fit->add_option("--kind", ft.kind, "linear or nonlinear")->check(CLI::IsMember({"linear", "nonlinear"}));
  fit->add_option("--model", ft.model, "generator model file");
  fit->add_option("--out", ft.out, "output feature model file")->required();
  fit->add_option("--seed", ft.seed, "sampling and training seed");
  fit->add_option("--samples", ft.samples, "training samples (default 2000 linear, 10000 nonlinear)");
  fit->add_option("--head", ft.head, "categorical head for linear fits")->check(CLI::IsMember({"logistic", "hinge"}));
  fit->add_flag("--balance", ft.balance, "class-balanced loss weights");
  fit->callback([&] {
    action = [&] {
      const auto bundle = load_generator(resolve_input(ft.model, "--model", "model.tuna"));
      const Space space = space_from_name(ft.space);
      const bool linear = ft.kind == "linear";
      const SeparabilityConfig defaults;
      const std::size_t n = ft.samples ? ft.samples : (linear ? defaults.linear_train : defaults.nonlinear_train);
      Rng rng(ft.seed);
      Rng sample_rng = rng.split(1);
      const auto train_set = sample_labeled(bundle, n, sample_rng);
      FeatureModel m;
      if (linear) {
        LinearFitConfig c;
        c.categorical_head = head_kind_from_name(ft.head);
        c.balance_classes = ft.balance;
        c.seed = ft.seed;
        m = fit_linear(space, train_set.in(space), train_set.labels, bundle.world, c);
      } else {
        NonlinearFitConfig c;
        c.balance_classes = ft.balance;
        c.seed = ft.seed;
        m = fit_nonlinear(space, train_set.in(space), train_set.labels, bundle.world, c);
      }
      save_feature_model(ft.out, m);
      Rng test_rng = rng.split(2);
      const auto test = sample_labeled(bundle, defaults.test, test_rng);
      const auto rep = evaluate_feature_model(m, test.in(space), test.labels);
      out << "held-out categorical accuracy " << format_number(rep.categorical_accuracy) << "\nwrote " << ft.out << '\n';
    };
  });

  // edit
  auto* edit = app.add_subcommand("edit", "edit a generated or supplied face");
  struct {
    std::string model, space = "w", method = "nonlinear", out, trace, image, json;
    std::vector<std::string> fms, deltas;
    std::uint64_t seed = 1;
    std::optional<double> alpha;
    std::size_t steps = NonlinearTraverseConfig{}.steps;
  } ed;
  edit->add_option("--model", ed.model, "generator model file");
  edit->add_option("--fm", ed.fms, "feature model file(s)")->required();
  edit->add_option("--space", ed.space, "z or w")->check(CLI::IsMember({"z", "w"}));
  edit->add_option("--method", ed.method, "linear or nonlinear")->check(CLI::IsMember({"linear", "nonlinear"}));
  edit->add_option("--delta", ed.deltas, "NAME=VALUE attribute change (repeatable)")->required();
  edit->add_option("--seed", ed.seed, "source latent seed (and inversion seed)");
  edit->add_option("--image", ed.image, "edit this PNG instead of a seeded sample");
  edit->add_option("--alpha", ed.alpha, "fixed linear step length");
  edit->add_option("--steps", ed.steps, "nonlinear traversal steps")->check(CLI::PositiveNumber);
  edit->add_option("--out", ed.out, "output PNG")->required();
  edit->add_option("--trace", ed.trace, "trajectory CSV");
  edit->add_option("--json", ed.json, "result summary JSON");
  edit->callback([&] {
    action = [&] {
      EditRequest req;
      for (const auto& d : ed.deltas) parse_delta(d, req.deltas);
      const auto bundle = load_generator(resolve_input(ed.model, "--model", "model.tuna"));
      const ModelSet models = load_models(ed.fms);
      req.space = space_from_name(ed.space);
      req.method = edit_method_from_name(ed.method);
      req.alpha = ed.alpha;
      req.seed = ed.seed;
      req.nonlinear.steps = ed.steps;
      if (ed.image.empty())
        req.source = SeedSource{ed.seed};
      else
        req.source = decode_png(read_file(ed.image));
      const auto res = edit_image(bundle, models, req);
      write_file(ed.out, encode_png(res.image));
      if (!ed.trace.empty()) write_file(ed.trace, trajectory_csv(res.trajectory));
      if (!ed.json.empty())
        write_json(ed.json, Json{{"seed", ed.seed},
                                 {"final_latent", latent_to_json(res.final_latent)},
                                 {"readout", attributes_to_json(res.trajectory.readouts.back())},
                                 {"reached_target", res.trajectory.reached_target},
                                 {"steps", res.trajectory.points.size()}});
      out << "reached target " << (res.trajectory.reached_target ? "yes" : "no") << " after "
          << res.trajectory.points.size() - 1 << " steps\nwrote " << ed.out << '\n';
    };
  });

  // invert
  auto* inv = app.add_subcommand("invert", "recover a W latent for a face image");
  struct {
    std::string model, image, out, recon, feature = "region";
    std::uint64_t seed = 1;
    std::size_t iterations = InvertConfig{}.iterations, restarts = InvertConfig{}.restarts;
  } iv;
  inv->add_option("--model", iv.model, "generator model file");
  inv->add_option("--image", iv.image, "32x32 grayscale PNG")->required();
  inv->add_option("--out", iv.out, "output JSON with the latent and losses")->required();
  inv->add_option("--recon", iv.recon, "reconstruction PNG");
  inv->add_option("--feature", iv.feature, "region, pixel or weighted")->check(CLI::IsMember({"region", "pixel", "weighted"}));
  inv->add_option("--seed", iv.seed, "restart seed");
  inv->add_option("--iterations", iv.iterations, "iterations per restart")->check(CLI::PositiveNumber);
  inv->add_option("--restarts", iv.restarts, "random restarts")->check(CLI::PositiveNumber);
  inv->callback([&] {
    action = [&] {
      const auto bundle = load_generator(resolve_input(iv.model, "--model", "model.tuna"));
      const Image target = decode_png(read_file(iv.image));
      InvertConfig c;
      c.feature = inversion_feature_from_name(iv.feature);
      c.iterations = iv.iterations;
      c.restarts = iv.restarts;
      Rng rng(iv.seed);
      const auto r = invert(bundle, target, c, rng);
      if (!iv.recon.empty()) write_file(iv.recon, encode_png(r.reconstruction));
      write_json(iv.out, Json{{"seed", iv.seed},
                              {"feature", iv.feature},
                              {"latent", latent_to_json(r.w)},
                              {"loss", r.loss},
                              {"restart_losses", r.restart_losses},
                              {"target_readout", attributes_to_json(oracle_label(target))},
                              {"readout", attributes_to_json(oracle_label(r.reconstruction))}});
      out << "inversion loss " << format_number(r.loss) << "\nwrote " << iv.out << '\n';
    };
  });

  // interpolate
  auto* interp = app.add_subcommand("interpolate", "interpolate between two seeded faces");
  struct {
    std::string model, space = "w", mode = "latent", fm, out;
    std::uint64_t seed_a = 1, seed_b = 2;
    std::size_t frames = 8;
  } ip;
  interp->add_option("--model", ip.model, "generator model file");
  interp->add_option("--seed-a", ip.seed_a, "first endpoint seed");
  interp->add_option("--seed-b", ip.seed_b, "second endpoint seed");
  interp->add_option("--space", ip.space, "z or w")->check(CLI::IsMember({"z", "w"}));
  interp->add_option("--mode", ip.mode, "latent or feature")->check(CLI::IsMember({"latent", "feature"}));
  interp->add_option("--fm", ip.fm, "nonlinear feature model (feature mode)");
  interp->add_option("--frames", ip.frames, "number of frames, endpoints included")->check(CLI::Range(2, 1000));
  interp->add_option("--out", ip.out, "output directory for frame_NNN.png")->required();
  interp->callback([&] {
    action = [&] {
      const auto bundle = load_generator(resolve_input(ip.model, "--model", "model.tuna"));
      const Space space = space_from_name(ip.space);
      auto endpoint = [&](std::uint64_t s) {
        const auto z = latent_from_seed(bundle, s);
        return space == Space::kZ ? z : map_latent(bundle, z);
      };
      std::optional<FeatureModel> fm;
      const bool feature = ip.mode == "feature";
      if (feature) {
        if (ip.fm.empty()) throw UsageError("--fm is required in feature mode");
        fm = load_feature_model(resolve_input(ip.fm, "--fm", nullptr));
      }
      std::vector<double> ts;
      for (std::size_t k = 0; k < ip.frames; ++k) ts.push_back(double(k) / double(ip.frames - 1));
      const auto frames = interpolate(bundle, endpoint(ip.seed_a), endpoint(ip.seed_b), ts,
                                      feature ? InterpolationMode::kFeature : InterpolationMode::kLatent,
                                      fm ? &*fm : nullptr);
      fs::create_directories(ip.out);
      for (std::size_t k = 0; k < frames.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03zu.png", k);
        write_file(fs::path(ip.out) / name, encode_png(frames[k]));
      }
      out << "wrote " << frames.size() << " frames to " << ip.out << '\n';
    };
  });

  // metrics
  auto* met = app.add_subcommand("metrics", "separability, inception score and FID report");
  struct {
    std::string model, fm, out;
    std::uint64_t seed = 1;
    std::size_t samples = SeparabilityConfig{}.test;
  } mt;
  met->add_option("--model", mt.model, "generator model file");
  met->add_option("--fm", mt.fm, "feature model file")->required();
  met->add_option("--out", mt.out, "report JSON")->required();
  met->add_option("--seed", mt.seed, "sampling seed");
  met->add_option("--samples", mt.samples, "generated samples per statistic")->check(CLI::Range(100, 1000000));
  met->callback([&] {
    action = [&] {
      const auto bundle = load_generator(resolve_input(mt.model, "--model", "model.tuna"));
      const auto fm = load_feature_model(resolve_input(mt.fm, "--fm", nullptr));
      Rng rng(mt.seed);
      Rng test_rng = rng.split(1);
      const auto test = sample_labeled(bundle, mt.samples, test_rng);
      const auto ss = model_separability(fm, test);
      std::vector<std::vector<double>> probs;
      for (const auto& img : test.images) probs.push_back(class_probabilities(img));
      Rng world_rng = rng.split(2);
      std::vector<Image> reference;
      for (std::size_t i = 0; i < mt.samples; ++i) {
        const auto a = sample_attributes(world_rng, bundle.world);
        std::vector<double> nuisance(bundle.world.nuisance_dim());
        for (double& x : nuisance) x = world_rng.normal();
        reference.push_back(render(a, nuisance));
      }
      Json per = Json::object();
      for (std::size_t i = 0; i < ss.attributes.size(); ++i) per[ss.attributes[i]] = ss.per_attribute[i];
      const Json report{{"seed", mt.seed},
                        {"space", std::string(space_name(fm.space))},
                        {"kind", std::string(model_kind_name(fm.kind))},
                        {"separability", {{"per_attribute", per}, {"overall", ss.overall}}},
                        {"inception_score", inception_score(probs)},
                        {"fid", fid(test.images, reference)},
                        {"samples",
                         {{"separability_test", test.size()},
                          {"inception", probs.size()},
                          {"fid_generated", test.images.size()},
                          {"fid_reference", reference.size()}}}};
      write_json(mt.out, report);
      out << "overall SS " << format_number(ss.overall) << "\nwrote " << mt.out << '\n';
    };
  });

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "traverse from a pathological start and measure collapse");
  struct {
    std::string model, fm, start = "zero", out, trace, spectrum, attribute = "glasses", watch = "face_width";
    std::size_t steps = CollapseConfig{}.steps;
    double step_size = CollapseConfig{}.step_size;
    std::uint64_t seed = 1;
  } dg;
  diag->add_option("--model", dg.model, "generator model file");
  diag->add_option("--fm", dg.fm, "linear feature model supplying the direction and space")->required();
  diag->add_option("--start", dg.start, "zero | perturbed=EPS | uniform=C | gaussian=SIGMA | sample");
  diag->add_option("--steps", dg.steps, "trace length")->check(CLI::Range(8, 100000));
  diag->add_option("--step-size", dg.step_size, "step length along the direction")->check(CLI::PositiveNumber);
  diag->add_option("--attribute", dg.attribute, "direction attribute");
  diag->add_option("--watch", dg.watch, "readout used for the oscillation index");
  diag->add_option("--seed", dg.seed, "start and baseline seed");
  diag->add_option("--out", dg.out, "report JSON")->required();
  diag->add_option("--trace", dg.trace, "trace CSV");
  diag->add_option("--spectrum", dg.spectrum, "spectrum CSV (bin, mean magnitude)");
  diag->callback([&] {
    action = [&] {
      StartSpec start;
      try {
        start = StartSpec::parse(dg.start);
      } catch (const InvalidArgument& e) {
        throw UsageError(std::string("--start: ") + e.what());
      }
      const auto bundle = load_generator(resolve_input(dg.model, "--model", "model.tuna"));
      const auto fm = load_feature_model(resolve_input(dg.fm, "--fm", nullptr));
      const auto dir = direction(fm, attribute_from_name(dg.attribute));
      CollapseConfig c;
      c.steps = dg.steps;
      c.step_size = dg.step_size;
      c.space = fm.space;
      Rng rng(dg.seed);
      Rng base_rng = rng.split(1), start_rng = rng.split(2);
      const double base = baseline_displacement(bundle, dir, c, base_rng);
      const auto trace = run_collapse_experiment(bundle, dir, start, c, start_rng);
      const auto rep = analyze_trace(trace, base, attribute_from_name(dg.watch));
      Json j = collapse_report_to_json(rep);
      j["seed"] = dg.seed;
      j["direction_attribute"] = dg.attribute;
      write_json(dg.out, j);
      if (!dg.trace.empty()) write_file(dg.trace, trace_csv(trace));
      if (!dg.spectrum.empty()) write_file(dg.spectrum, spectrum_csv(mean_spectrum(trace)));
      out << "displacement ratio " << format_number(rep.ratio) << (rep.collapsed ? " (collapse)" : "") << "\nwrote "
          << dg.out << '\n';
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP JSON API for sampling, editing and inversion");
  struct {
    std::string model, host = "127.0.0.1";
    std::vector<std::string> fms;
    int port = 8080;
    std::size_t max_body = ServiceConfig{}.max_body_bytes;
    std::uint64_t server_seed = 0;
  } sv;
  serve->add_option("--model", sv.model, "generator model file");
  serve->add_option("--fm", sv.fms, "feature model file(s)");
  serve->add_option("--host", sv.host, "bind address");
  serve->add_option("--port", sv.port, "port")->check(CLI::Range(1, 65535));
  serve->add_option("--max-body", sv.max_body, "largest accepted request body in bytes")->check(CLI::PositiveNumber);
  serve->add_option("--server-seed", sv.server_seed, "seeds requests that carry no seed");
  serve->callback([&] {
    action = [&] {
      ServiceConfig c;
      c.host = sv.host;
      c.port = sv.port;
      c.model_path = resolve_input(sv.model, "--model", "model.tuna");
      for (const auto& f : sv.fms) c.feature_model_paths.push_back(resolve_input(f, "--fm", nullptr));
      c.max_body_bytes = sv.max_body;
      c.server_seed = sv.server_seed;
      auto service = Service::from_config(c);
      run_server(service);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    if (app.get_subcommands().empty()) err << app.help();
    return 1;
  }
  try {
    if (action) action();
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace tunalab
