#pragma once

// Error rates, corruption scores (CE, mCE, relative mCE) and the mixed test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pda/corruptions.hpp"
#include "pda/data.hpp"
#include "pda/nn.hpp"
#include "pda/random.hpp"

namespace pda {

inline double error_rate(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.empty()) throw std::invalid_argument("error_rate: empty input");
  if (predictions.size() != labels.size())
    throw std::invalid_argument("error_rate: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predictions[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

inline double error_rate(const Model& model, const Dataset& data) { return error_rate(predict(model, data.images), data.labels); }

using SeverityErrors = std::array<double, 5>;

/// CE_c = sum_s E^f_{s,c} / sum_s E^base_{s,c}.
inline double corruption_error(const SeverityErrors& model, const SeverityErrors& base) {
  const double den = std::accumulate(base.begin(), base.end(), 0.0);
  if (!(den > 0.0)) throw std::domain_error("corruption_error: baseline error sum is zero");
  return std::accumulate(model.begin(), model.end(), 0.0) / den;
}

inline double mce(std::span<const double> ce) {
  if (ce.empty()) throw std::invalid_argument("mce: empty list");
  return std::accumulate(ce.begin(), ce.end(), 0.0) / static_cast<double>(ce.size());
}

/// (sum_s E^f_{s,c} - E^f_clean) / (sum_s E^base_{s,c} - E^base_clean), with
/// one clean error subtracted from the five-severity sum.
inline double relative_corruption_error(const SeverityErrors& model, double model_clean, const SeverityErrors& base,
                                        double base_clean) {
  const double den = std::accumulate(base.begin(), base.end(), 0.0) - base_clean;
  if (den == 0.0) throw std::domain_error("relative_mce: zero denominator");
  return (std::accumulate(model.begin(), model.end(), 0.0) - model_clean) / den;
}

struct RelativeMce {
  std::vector<double> per_corruption;
  double mean = 0.0;
};

inline RelativeMce relative_mce(std::span<const SeverityErrors> model, double model_clean,
                                std::span<const SeverityErrors> base, double base_clean) {
  if (model.size() != base.size()) throw std::invalid_argument("relative_mce: tables differ in corruption count");
  RelativeMce r;
  for (std::size_t c = 0; c < model.size(); ++c)
    r.per_corruption.push_back(relative_corruption_error(model[c], model_clean, base[c], base_clean));
  r.mean = mce(r.per_corruption);
  return r;
}

struct ErrorTable {
  std::string model_id;
  double clean_error = 0.0;
  std::map<std::string, SeverityErrors> errors;  // by corruption name

  void validate() const {
    auto in_range = [](double e) { return e >= 0.0 && e <= 1.0; };
    if (!in_range(clean_error)) throw std::out_of_range("clean error outside [0,1]");
    for (const auto& [name, row] : errors)
      for (double e : row)
        if (!in_range(e)) throw std::out_of_range("error for " + name + " outside [0,1]");
  }
};

struct CorruptionScore {
  std::string corruption;
  double ce = 0.0;
  double rmce = 0.0;
};

struct EvalReport {
  ErrorTable model;
  ErrorTable base;
  std::vector<CorruptionScore> scores;
  double mce = 0.0;
  double relative_mce = 0.0;
};

inline EvalReport score_tables(const ErrorTable& model, const ErrorTable& base) {
  model.validate();
  base.validate();
  if (model.errors.empty()) throw std::invalid_argument("relative_mce: empty error table");
  EvalReport r{model, base, {}, 0.0, 0.0};
  std::vector<double> ce, rmce;
  for (const auto& [name, row] : model.errors) {
    const auto it = base.errors.find(name);
    if (it == base.errors.end()) throw std::invalid_argument("baseline has no errors for " + name);
    r.scores.push_back({name, corruption_error(row, it->second),
                        relative_corruption_error(row, model.clean_error, it->second, base.clean_error)});
    ce.push_back(r.scores.back().ce);
    rmce.push_back(r.scores.back().rmce);
  }
  if (base.errors.size() != model.errors.size()) throw std::invalid_argument("error tables cover different corruptions");
  r.mce = mce(ce);
  r.relative_mce = mce(rmce);
  return r;
}

/// Scores a model on every sub-dataset of a suite directory.
inline ErrorTable evaluate_suite(const Model& model, const std::filesystem::path& suite, std::string model_id) {
  ErrorTable t;
  t.model_id = std::move(model_id);
  t.clean_error = error_rate(model, load_dataset(suite / "clean.bin"));
  SeverityErrors unset;
  unset.fill(std::numeric_limits<double>::quiet_NaN());
  for (const auto& e : read_suite_manifest(suite).entries) {
    auto& row = t.errors.try_emplace(to_string(e.kind), unset).first->second;
    row[static_cast<std::size_t>(e.severity - 1)] = error_rate(model, load_dataset(suite_path(suite, e.kind, e.severity)));
  }
  for (const auto& [name, row] : t.errors)
    for (double v : row)
      if (std::isnan(v)) throw FormatError("suite is missing a severity for " + name);
  return t;
}

/// report.csv: one row per (corruption, severity) with the CE and RmCE of its
/// corruption, then clean_error, mCE and relative_mCE footer rows.
inline void write_report_csv(std::ostream& os, const EvalReport& r) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  os << "corruption,severity,err_model,err_base,CE,RmCE\n";
  for (const auto& s : r.scores) {
    const auto& em = r.model.errors.at(s.corruption);
    const auto& eb = r.base.errors.at(s.corruption);
    for (std::size_t k = 0; k < 5; ++k)
      os << s.corruption << ',' << k + 1 << ',' << fmt(em[k]) << ',' << fmt(eb[k]) << ',' << fmt(s.ce) << ','
         << fmt(s.rmce) << '\n';
  }
  os << "clean_error,," << fmt(r.model.clean_error) << ',' << fmt(r.base.clean_error) << ",,\n";
  os << "mCE,,,," << fmt(r.mce) << ",\n";
  os << "relative_mCE,,,,," << fmt(r.relative_mce) << '\n';
}

/// Top-1 accuracy on an equal-proportion union of three sets: each is cut to
/// the smallest size, and the union is scored in a seeded shuffled order.
inline double mixed_test(const Model& model, const Dataset& clean, const Dataset& adversarial, const Dataset& corrupted,
                         std::uint64_t seed = 0) {
  const std::size_t n = std::min({clean.size(), adversarial.size(), corrupted.size()});
  if (n == 0) throw std::invalid_argument("mixed_test: empty component set");
  const std::array<const Dataset*, 3> parts = {&clean, &adversarial, &corrupted};
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (part, row)
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < n; ++i) order.emplace_back(p, i);
  Rng rng(derive_seed(seed, "mixed"));
  rng.shuffle(order.begin(), order.end());

  std::vector<double> pixels;
  std::vector<std::size_t> labels;
  for (const auto& [p, i] : order) {
    const Tensor row = parts[p]->images.rows(i, i + 1);
    pixels.insert(pixels.end(), row.data().begin(), row.data().end());
    labels.push_back(parts[p]->labels[i]);
  }
  Shape shape = clean.images.shape();
  shape[0] = order.size();
  return 1.0 - error_rate(predict(model, Tensor(shape, std::move(pixels))), labels);
}

}  // namespace pda
