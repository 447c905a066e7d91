#pragma once

// Command-line front end. cli_dispatch returns 0 on success, 1 on a runtime
// failure and 2 on a usage error (help is printed for the latter).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pda/analysis.hpp"
#include "pda/attacks.hpp"
#include "pda/corruptions.hpp"
#include "pda/data.hpp"
#include "pda/metrics.hpp"
#include "pda/nn.hpp"
#include "pda/train.hpp"

namespace pda {

namespace cli {

inline std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

inline std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline double accuracy(const Model& model, const Tensor& x, std::span<const std::size_t> y) {
  return 1.0 - error_rate(predict(model, x), y);
}

struct AttackFlags {
  std::string family = "pgd";
  std::string norm = "linf";
  double eps = 8;
  double alpha = 2;
  std::size_t steps = 20;
  double c = 1.0;
  double lr = 0.01;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--attack", family, "fgsm | pgd | cw")->check(CLI::IsMember({"fgsm", "pgd", "cw", "cw_l2"}));
    app->add_option("--norm", norm, "linf | l2 (pgd)")->check(CLI::IsMember({"linf", "l2"}));
    app->add_option("--eps", eps, "budget; values >= 1 are in 1/255 units");
    app->add_option("--alpha", alpha, "pgd step size; values >= 1 are in 1/255 units");
    app->add_option("--steps", steps, "pgd / cw iterations");
    app->add_option("--c", c, "cw loss weight");
    app->add_option("--lr", lr, "cw step size");
    app->add_option("--seed", seed, "random-start seed");
  }

  AttackSpec spec() const {
    AttackSpec s;
    s.family = parse_attack_family(family);
    s.norm = norm == "l2" ? Norm::l2 : Norm::linf;
    s.epsilon = pixel_units(eps);
    s.step_size = pixel_units(alpha);
    s.steps = steps;
    s.cw_c = c;
    s.cw_lr = lr;
    s.seed = seed;
    return s;
  }
};

inline AttackSpec pgd_spec(double eps, std::size_t steps, std::uint64_t seed) {
  AttackSpec s;
  s.epsilon = eps;
  s.step_size = eps / 4.0;
  s.steps = steps;
  s.seed = seed;
  return s;
}

}  // namespace cli

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Progressive data augmentation lab: training, attacks, corruption suites and analysis."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer("Exit codes: 0 success, 1 runtime error, 2 usage error.");

  // train
  std::string plan_path, data_spec, out_path, arch;
  std::uint64_t model_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a plan file");
  train_cmd->add_option("--plan", plan_path, "key=value plan file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data_spec, "dataset file or generator spec")->required();
  train_cmd->add_option("--out", out_path, "checkpoint directory")->required();
  train_cmd->add_option("--arch", arch, "mlp | cnn_small | linear (default by input rank)");
  train_cmd->add_option("--model-seed", model_seed, "initialization seed (default: plan seed)");
  train_cmd->callback([&] {
    const TrainPlan plan = load_plan(plan_path);
    const Dataset data = open_dataset(data_spec);
    const Shape in = data.sample_shape();
    const std::string a = !arch.empty() ? arch : (in.size() == 3 ? "cnn_small" : "mlp");
    Model model = build_model(a, in, data.num_classes, train_cmd->count("--model-seed") ? model_seed : plan.seed);
    const TrainHistory h = train(model, data, plan);
    save_checkpoint(model, out_path, plan.epochs);
    auto os = cli::open_out(std::filesystem::path(out_path) / "history.csv");
    h.write_csv(os);
    out << plan_name(plan) << ": final clean_acc " << cli::fixed6(h.epochs.back().clean_acc) << '\n';
  });

  // attack-eval
  std::string model_path;
  cli::AttackFlags attack;
  std::size_t batch = 250;
  std::string adv_out;
  auto* attack_cmd = app.add_subcommand("attack-eval", "Accuracy of a checkpoint under attack");
  attack_cmd->add_option("--model", model_path, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  attack_cmd->add_option("--data", data_spec, "dataset file or generator spec")->required();
  attack_cmd->add_option("--out", out_path, "result CSV")->required();
  attack_cmd->add_option("--batch", batch, "attack batch size");
  attack_cmd->add_option("--save-adv", adv_out, "also write the adversarial dataset here");
  attack.add(attack_cmd);
  attack_cmd->callback([&] {
    const Model model = load_checkpoint(model_path).model;
    const Dataset data = open_dataset(data_spec);
    const AttackSpec spec = attack.spec();
    const Tensor adv = attack_dataset(model, data, spec, batch);
    const double clean = cli::accuracy(model, data.images, data.labels);
    const double robust = cli::accuracy(model, adv, data.labels);
    auto os = cli::open_out(out_path);
    os << "attack,norm,eps,steps,n,clean_acc,adv_acc\n"
       << attack.family << ',' << (spec.family == AttackFamily::cw_l2 ? "l2" : attack.norm) << ',' << cli::fixed6(spec.epsilon) << ',' << spec.steps << ','
       << data.size() << ',' << cli::fixed6(clean) << ',' << cli::fixed6(robust) << '\n';
    if (!adv_out.empty()) {
      Dataset a = data;
      a.images = adv;
      save_dataset(adv_out, a);
    }
    out << "clean " << cli::fixed6(clean) << " adversarial " << cli::fixed6(robust) << '\n';
  });

  // corrupt
  std::string kinds_csv;
  std::uint64_t seed = 0;
  auto* corrupt_cmd = app.add_subcommand("corrupt", "Build a corruption suite from a dataset");
  corrupt_cmd->add_option("--data", data_spec, "dataset file or generator spec")->required();
  corrupt_cmd->add_option("--out", out_path, "suite directory")->required();
  corrupt_cmd->add_option("--kinds", kinds_csv, "comma-separated subset (default: all 12)");
  corrupt_cmd->add_option("--seed", seed, "noise seed");
  corrupt_cmd->callback([&] {
    std::vector<Corruption> kinds;
    for (const auto& k : cli::split(kinds_csv)) kinds.push_back(parse_corruption(k));
    if (kinds.empty()) kinds.assign(kAllCorruptions.begin(), kAllCorruptions.end());
    const auto m = build_corruption_suite(open_dataset(data_spec), kinds, seed, out_path);
    out << m.entries.size() << " sub-datasets written to " << out_path << '\n';
  });

  // eval-corruption
  std::string baseline_path, suite_path_s;
  auto* evalc_cmd = app.add_subcommand("eval-corruption", "CE / mCE / relative mCE against a baseline");
  evalc_cmd->add_option("--model", model_path, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  evalc_cmd->add_option("--baseline", baseline_path, "baseline checkpoint")->required()->check(CLI::ExistingDirectory);
  evalc_cmd->add_option("--suite", suite_path_s, "suite directory")->required()->check(CLI::ExistingDirectory);
  evalc_cmd->add_option("--out", out_path, "report CSV")->required();
  evalc_cmd->callback([&] {
    const ErrorTable m = evaluate_suite(load_checkpoint(model_path).model, suite_path_s, model_path);
    const ErrorTable b = evaluate_suite(load_checkpoint(baseline_path).model, suite_path_s, baseline_path);
    const EvalReport r = score_tables(m, b);
    auto os = cli::open_out(out_path);
    write_report_csv(os, r);
    out << "mCE " << cli::fixed6(r.mce) << " relative mCE " << cli::fixed6(r.relative_mce) << '\n';
  });

  // mixed-test
  double mixed_eps = 4;
  auto* mixed_cmd = app.add_subcommand("mixed-test", "Accuracy on clean + adversarial + corrupted thirds");
  mixed_cmd->add_option("--model", model_path, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  mixed_cmd->add_option("--data", data_spec, "clean test set")->required();
  mixed_cmd->add_option("--out", out_path, "result CSV")->required();
  mixed_cmd->add_option("--eps", mixed_eps, "PGD-20 L-inf budget of the adversarial third");
  mixed_cmd->add_option("--seed", seed, "attack, corruption and shuffle seed");
  mixed_cmd->callback([&] {
    const Model model = load_checkpoint(model_path).model;
    const Dataset clean = open_dataset(data_spec);
    Dataset adv = clean;
    adv.images = attack_dataset(model, clean, cli::pgd_spec(pixel_units(mixed_eps), 20, seed));
    const Dataset corr = mixed_corruption_set(clean, seed);
    const double acc = mixed_test(model, clean, adv, corr, seed);
    auto os = cli::open_out(out_path);
    os << "clean_acc,adv_acc,corrupt_acc,mixed_acc\n"
       << cli::fixed6(cli::accuracy(model, clean.images, clean.labels)) << ','
       << cli::fixed6(cli::accuracy(model, adv.images, adv.labels)) << ','
       << cli::fixed6(cli::accuracy(model, corr.images, corr.labels)) << ',' << cli::fixed6(acc) << '\n';
    out << "mixed accuracy " << cli::fixed6(acc) << '\n';
  });

  // fourier
  double r_frac = 0.1;
  auto* fourier_cmd = app.add_subcommand("fourier", "Fourier-basis sensitivity heat map");
  fourier_cmd->add_option("--model", model_path, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  fourier_cmd->add_option("--data", data_spec, "evaluation set")->required();
  fourier_cmd->add_option("--out", out_path, "output directory (heatmap.csv, heatmap.pgm)")->required();
  fourier_cmd->add_option("--r", r_frac, "perturbation norm as a fraction of the image norm");
  fourier_cmd->add_option("--seed", seed, "sign seed");
  fourier_cmd->callback([&] {
    const Heatmap map = fourier_heatmap(load_checkpoint(model_path).model, open_dataset(data_spec), r_frac, seed);
    std::filesystem::create_directories(out_path);
    write_heatmap(std::filesystem::path(out_path) / "heatmap.csv", std::filesystem::path(out_path) / "heatmap.pgm", map);
    out << "heat map " << map.h << 'x' << map.w << " written to " << out_path << '\n';
  });

  // gradviz
  std::size_t count = 8;
  auto* grad_cmd = app.add_subcommand("gradviz", "Normalized input gradients as an image strip");
  grad_cmd->add_option("--model", model_path, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  grad_cmd->add_option("--data", data_spec, "images")->required();
  grad_cmd->add_option("--out", out_path, "PGM/PPM file")->required();
  grad_cmd->add_option("--count", count, "number of leading images");
  grad_cmd->callback([&] {
    const Model model = load_checkpoint(model_path).model;
    const Dataset data = open_dataset(data_spec).head(count);
    if (data.images.rank() != 4) throw ShapeError("gradviz needs image data [N,C,H,W]");
    if (std::filesystem::path(out_path).has_parent_path())
      std::filesystem::create_directories(std::filesystem::path(out_path).parent_path());
    write_image_strip(out_path, grad_visualization(model, data.images, data.labels));
    out << data.size() << " gradient images written to " << out_path << '\n';
  });

  // theory-check
  std::size_t anchors = 50, pairs = 10000;
  BoundProbe probe;
  Theorem2Inputs t2;
  double c_threshold = 1e-3;
  std::vector<double> constants;
  auto* theory_cmd = app.add_subcommand("theory-check", "Empirical checks of the perturbation and generalization bounds");
  theory_cmd->add_option("--model", model_path, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  theory_cmd->add_option("--data", data_spec, "anchor / sample set")->required();
  theory_cmd->add_option("--out", out_path, "output directory (theorem1.csv, theorem2.csv)")->required();
  theory_cmd->add_option("--anchors", anchors, "number of leading examples used as anchors");
  theory_cmd->add_option("--radius", probe.radius, "logit search radius");
  theory_cmd->add_option("--slack", probe.slack, "maximizer slack epsilon");
  theory_cmd->add_option("--samples", probe.samples, "neighborhood samples for C and K");
  theory_cmd->add_option("--seed", probe.seed, "sampling seed");
  theory_cmd->add_option("--c-threshold", c_threshold, "anchors with C below this are reported, not judged");
  theory_cmd->add_option("--gamma", t2.gamma, "cover radius");
  theory_cmd->add_option("--lambda", t2.lambda, "penalty weight (must exceed L1)");
  theory_cmd->add_option("--p", t2.p, "failure probability");
  theory_cmd->add_option("--constants", constants, "M0 M1 L0 L1 (default: estimated)")->expected(4);
  theory_cmd->add_option("--pairs", pairs, "pairs used to estimate the constants");
  theory_cmd->callback([&] {
    const Model model = load_checkpoint(model_path).model;
    const Dataset data = open_dataset(data_spec);
    std::filesystem::create_directories(out_path);
    const std::filesystem::path dir(out_path);

    auto t1 = cli::open_out(dir / "theorem1.csv");
    t1 << "anchor,label,lhs,rhs,C,K,newton,status\n";
    std::size_t judged = 0, held = 0;
    for (std::size_t a = 0; a < std::min(anchors, data.size()); ++a) {
      BoundProbe p = probe;
      p.seed = derive_seed(probe.seed, a);
      const Theorem1Result r = theorem1_check(model, data.images.rows(a, a + 1), data.labels[a], p);
      std::string status = "skipped_small_C";
      if (r.c_ok && r.c >= c_threshold) {
        ++judged;
        held += r.holds;
        status = r.holds ? "holds" : "violated";
      }
      t1 << a << ',' << data.labels[a] << ',' << cli::fixed6(r.lhs) << ',' << (r.c_ok ? cli::fixed6(r.rhs) : "inf") << ','
         << r.c << ',' << r.k << ',' << cli::fixed6(r.newton) << ',' << status << '\n';
    }

    BoundConstants k;
    if (constants.size() == 4) {
      k = {constants[0], constants[1], constants[2], constants[3]};
    } else {
      k = estimate_bound_constants(model, data, pairs, probe.seed);
    }
    t2.m0 = k.m0, t2.m1 = k.m1, t2.l0 = k.l0, t2.l1 = k.l1;
    t2.empirical_loss = detail::clean_metrics(model, data).first;
    auto t2os = cli::open_out(dir / "theorem2.csv");
    t2os << "empirical_loss,n,gamma,lambda,M0,M1,L0,L1,p,cover,cover_term,concentration,penalty,bound,constants\n";
    const std::string origin = constants.size() == 4 ? "supplied" : "empirical_not_certified";
    t2os << cli::fixed6(t2.empirical_loss) << ',' << data.size() << ',' << t2.gamma << ',' << t2.lambda << ','
         << cli::fixed6(k.m0) << ',' << cli::fixed6(k.m1) << ',' << cli::fixed6(k.l0) << ',' << cli::fixed6(k.l1) << ','
         << t2.p << ',';
    if (t2.lambda > t2.l1) {
      const Theorem2Terms t = theorem2_bound(t2, data.images);
      t2os << covering_number(data.images, t2.gamma / 2.0) << ',' << cli::fixed6(t.cover_term) << ','
           << cli::fixed6(t.concentration) << ',' << cli::fixed6(t.penalty) << ',' << cli::fixed6(t.bound) << ',' << origin
           << '\n';
    } else {
      t2os << ",,,,inapplicable_lambda_le_L1," << origin << '\n';
    }
    out << "maximizer bound: " << held << '/' << judged << " judged anchors hold\n";
  });

  // report
  std::string models_csv;
  auto* report_cmd = app.add_subcommand("report", "One summary row per model: clean, PGD-20, mCE, mixed");
  report_cmd->add_option("--models", models_csv, "comma-separated checkpoint directories")->required();
  report_cmd->add_option("--baseline", baseline_path, "baseline checkpoint for mCE")->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("--data", data_spec, "clean test set")->required();
  report_cmd->add_option("--suite", suite_path_s, "corruption suite built from the test set")->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("--out", out_path, "summary CSV")->required();
  report_cmd->add_option("--seed", seed, "attack / mixed-test seed");
  report_cmd->callback([&] {
    const Dataset test = open_dataset(data_spec);
    const ErrorTable base = evaluate_suite(load_checkpoint(baseline_path).model, suite_path_s, baseline_path);
    const Dataset corr = mixed_corruption_set(test, seed);
    auto os = cli::open_out(out_path);
    os << "model,clean_acc,pgd20_acc,mCE,relative_mCE,mixed_acc\n";
    for (const auto& path : cli::split(models_csv)) {
      const Model model = load_checkpoint(path).model;
      const Tensor adv8 = attack_dataset(model, test, cli::pgd_spec(8.0 / 255.0, 20, seed));
      Dataset adv4 = test;
      adv4.images = attack_dataset(model, test, cli::pgd_spec(4.0 / 255.0, 20, seed));
      const EvalReport r = score_tables(evaluate_suite(model, suite_path_s, path), base);
      os << path << ',' << cli::fixed6(cli::accuracy(model, test.images, test.labels)) << ','
         << cli::fixed6(cli::accuracy(model, adv8, test.labels)) << ',' << cli::fixed6(r.mce) << ','
         << cli::fixed6(r.relative_mce) << ',' << cli::fixed6(mixed_test(model, test, adv4, corr, seed)) << '\n';
    }
    out << "summary written to " << out_path << '\n';
  });

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "Materialize a generator spec or IDX pair as a dataset file");
  gen_cmd->add_option("--data", data_spec, "generator spec, e.g. shapes:n=500,size=16,seed=2")->required();
  gen_cmd->add_option("--out", out_path, "dataset file")->required();
  gen_cmd->callback([&] {
    const Dataset d = open_dataset(data_spec);
    if (std::filesystem::path(out_path).has_parent_path())
      std::filesystem::create_directories(std::filesystem::path(out_path).parent_path());
    save_dataset(out_path, d);
    out << d.size() << " examples written to " << out_path << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);  // --help
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace pda
