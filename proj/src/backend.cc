// Copyright 2026 The spkv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "spkv/backend.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "spkv/errors.h"

namespace spkv {

namespace {

void CheckClasses(const std::vector<double>& target, const std::vector<double>& nontarget) {
  if (target.empty() || nontarget.empty())
    throw ArgumentError("metrics need at least one target and one nontarget score");
  for (double x : target)
    if (!std::isfinite(x)) throw ArgumentError("non-finite target score");
  for (double x : nontarget)
    if (!std::isfinite(x)) throw ArgumentError("non-finite nontarget score");
}

// Miss and false-alarm counts at every sweep threshold, in increasing order.
struct Sweep {
  std::vector<long> miss;
  std::vector<long> fa;
  long nt = 0;
  long nn = 0;
};

Sweep BuildSweep(const std::vector<double>& target, const std::vector<double>& nontarget) {
  CheckClasses(target, nontarget);
  std::vector<std::pair<double, int>> all;
  all.reserve(target.size() + nontarget.size());
  for (double x : target) all.emplace_back(x, 1);
  for (double x : nontarget) all.emplace_back(x, 0);
  std::sort(all.begin(), all.end());
  Sweep s;
  s.nt = static_cast<long>(target.size());
  s.nn = static_cast<long>(nontarget.size());
  long miss = 0, fa = s.nn;
  s.miss.push_back(miss);
  s.fa.push_back(fa);
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    for (; j < all.size() && all[j].first == all[i].first; ++j) {
      if (all[j].second) ++miss;
      else --fa;
    }
    s.miss.push_back(miss);
    s.fa.push_back(fa);
    i = j;
  }
  return s;
}

double Sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(-z)), stable for both signs
double SoftplusNeg(double z) { return z >= 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

}  // namespace

void CheckDcfParams(const DcfParams& p) {
  if (p.priors.empty()) throw ConfigError("DCF needs at least one target prior");
  for (double pt : p.priors)
    if (!(pt > 0.0 && pt < 1.0)) throw ConfigError("target prior must lie in (0, 1)");
  if (!(p.c_miss > 0.0 && p.c_fa > 0.0)) throw ConfigError("DCF costs must be positive");
}

SplitScores SplitByLabel(const ScoreSet& set) {
  if (set.trials.size() != set.scores.size()) throw ShapeError("score set has mismatched trials and scores");
  SplitScores out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    switch (set.trials[i].label) {
      case TrialLabel::kTarget: out.target.push_back(set.scores[i]); break;
      case TrialLabel::kNontarget: out.nontarget.push_back(set.scores[i]); break;
      case TrialLabel::kUnknown:
        throw ArgumentError("trial " + set.trials[i].enroll + " " + set.trials[i].test + " has no label");
    }
  }
  CheckClasses(out.target, out.nontarget);
  return out;
}

double ComputeEer(const std::vector<double>& target, const std::vector<double>& nontarget) {
  const Sweep s = BuildSweep(target, nontarget);
  const double nt = static_cast<double>(s.nt), nn = static_cast<double>(s.nn);
  for (std::size_t k = 1; k < s.miss.size(); ++k) {
    if (s.miss[k] * s.nn < s.fa[k] * s.nt) continue;  // P_miss < P_fa
    const double pm0 = s.miss[k - 1] / nt, pf0 = s.fa[k - 1] / nn;
    const double pm1 = s.miss[k] / nt, pf1 = s.fa[k] / nn;
    if (s.miss[k - 1] * s.nn >= s.fa[k - 1] * s.nt) return pm0;
    const double a = (pf0 - pm0) / ((pm1 - pm0) - (pf1 - pf0));
    return pm0 + a * (pm1 - pm0);
  }
  return 1.0;  // unreachable: the last threshold has P_miss = 1, P_fa = 0
}

double ComputeEer(const ScoreSet& set) {
  const auto s = SplitByLabel(set);
  return ComputeEer(s.target, s.nontarget);
}

double ComputeMinDcf(const std::vector<double>& target, const std::vector<double>& nontarget,
                     const DcfParams& params) {
  CheckDcfParams(params);
  const Sweep s = BuildSweep(target, nontarget);
  double total = 0.0;
  for (double p : params.priors) {
    const double norm = std::min(params.c_miss * p, params.c_fa * (1.0 - p));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < s.miss.size(); ++k) {
      const double pm = static_cast<double>(s.miss[k]) / s.nt, pf = static_cast<double>(s.fa[k]) / s.nn;
      best = std::min(best, (params.c_miss * pm * p + params.c_fa * pf * (1.0 - p)) / norm);
    }
    total += best;
  }
  return total / static_cast<double>(params.priors.size());
}

double ComputeMinDcf(const ScoreSet& set, const DcfParams& params) {
  const auto s = SplitByLabel(set);
  return ComputeMinDcf(s.target, s.nontarget, params);
}

double BayesThreshold(double p_target, double c_miss, double c_fa) {
  return std::log(c_fa * (1.0 - p_target) / (c_miss * p_target));
}

double ComputeActDcf(const std::vector<double>& target, const std::vector<double>& nontarget,
                     const DcfParams& params) {
  CheckDcfParams(params);
  CheckClasses(target, nontarget);
  double total = 0.0;
  for (double p : params.priors) {
    const double t = BayesThreshold(p, params.c_miss, params.c_fa);
    long miss = 0, fa = 0;
    for (double x : target) miss += !(x > t);
    for (double x : nontarget) fa += x > t;
    const double pm = static_cast<double>(miss) / static_cast<double>(target.size());
    const double pf = static_cast<double>(fa) / static_cast<double>(nontarget.size());
    const double norm = std::min(params.c_miss * p, params.c_fa * (1.0 - p));
    total += (params.c_miss * pm * p + params.c_fa * pf * (1.0 - p)) / norm;
  }
  return total / static_cast<double>(params.priors.size());
}

double ComputeActDcf(const ScoreSet& set, const DcfParams& params) {
  const auto s = SplitByLabel(set);
  return ComputeActDcf(s.target, s.nontarget, params);
}

CalibrationModel CalibrateFit(const std::vector<double>& target, const std::vector<double>& nontarget,
                              const CalibrationOptions& opt) {
  CheckClasses(target, nontarget);
  if (!(opt.prior > 0.0 && opt.prior < 1.0)) throw ConfigError("calibration prior must lie in (0, 1)");
  if (opt.max_iters < 1 || !(opt.tolerance > 0.0)) throw ConfigError("bad calibration solver options");
  double lo = target[0], hi = target[0];
  for (const auto* v : {&target, &nontarget})
    for (double x : *v) lo = std::min(lo, x), hi = std::max(hi, x);
  if (!(hi > lo)) throw FitError("calibration scores are all equal; the fit is degenerate");

  const double offset = std::log(opt.prior / (1.0 - opt.prior));
  const double wt = opt.prior / static_cast<double>(target.size());
  const double wn = (1.0 - opt.prior) / static_cast<double>(nontarget.size());

  // objective, gradient and Hessian of the weighted negative log-likelihood
  auto eval = [&](double a, double b, Eigen::Vector2d* g, Eigen::Matrix2d* h) {
    double f = 0.0;
    if (g) g->setZero();
    if (h) h->setZero();
    auto add = [&](double s, double w, bool tar) {
      const double z = a * s + b + offset;
      f += w * SoftplusNeg(tar ? z : -z);
      const double sig = Sigmoid(z);
      const double dz = w * (tar ? sig - 1.0 : sig);
      if (g) *g += dz * Eigen::Vector2d(s, 1.0);
      if (h) {
        const double c = w * sig * (1.0 - sig);
        (*h)(0, 0) += c * s * s;
        (*h)(0, 1) += c * s;
        (*h)(1, 1) += c;
      }
    };
    for (double s : target) add(s, wt, true);
    for (double s : nontarget) add(s, wn, false);
    if (h) (*h)(1, 0) = (*h)(0, 1);
    return f;
  };

  CalibrationModel m;
  Eigen::Vector2d g;
  Eigen::Matrix2d h;
  double f = eval(m.a, m.b, &g, &h);
  for (int it = 0; it < opt.max_iters; ++it) {
    m.gradient_norm = g.norm();
    if (m.gradient_norm <= opt.tolerance) {
      m.iterations = it;
      return m;
    }
    Eigen::Vector2d step = h.ldlt().solve(-g);
    if (!step.allFinite() || step.dot(g) >= 0.0) step = -g;
    double t = 1.0;
    double fn = f;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      fn = eval(m.a + t * step[0], m.b + t * step[1], nullptr, nullptr);
      if (fn <= f + 1e-4 * t * step.dot(g)) break;
    }
    m.a += t * step[0];
    m.b += t * step[1];
    f = eval(m.a, m.b, &g, &h);
    if (!std::isfinite(f) || !std::isfinite(m.a) || !std::isfinite(m.b)) break;
  }
  m.gradient_norm = g.norm();
  if (m.gradient_norm <= opt.tolerance && std::isfinite(m.a) && std::isfinite(m.b)) {
    m.iterations = opt.max_iters;
    return m;
  }
  char msg[256];
  std::snprintf(msg, sizeof(msg),
                "calibration did not converge after %d Newton steps: a=%.6g b=%.6g |grad|=%.3g "
                "(classes may be perfectly separated)",
                opt.max_iters, m.a, m.b, m.gradient_norm);
  throw FitError(msg);
}

CalibrationModel CalibrateFit(const ScoreSet& dev, const CalibrationOptions& opt) {
  const auto s = SplitByLabel(dev);
  return CalibrateFit(s.target, s.nontarget, opt);
}

ScoreSet ApplyCalibration(const ScoreSet& set, const CalibrationModel& model) {
  if (!std::isfinite(model.a) || !std::isfinite(model.b)) throw ArgumentError("calibration is not finite");
  ScoreSet out = set;
  for (double& x : out.scores) x = model.a * x + model.b;
  return out;
}

void WriteCalibration(const std::string& path, const CalibrationModel& model) {
  nlohmann::json j{{"a", model.a}, {"b", model.b}, {"iterations", model.iterations},
                   {"gradient_norm", model.gradient_norm}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

CalibrationModel ReadCalibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    CalibrationModel m;
    m.a = j.at("a");
    m.b = j.at("b");
    m.iterations = j.value("iterations", 0);
    m.gradient_norm = j.value("gradient_norm", 0.0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

ScoreSet Fuse(const std::vector<ScoreSet>& systems) {
  if (systems.empty()) throw ArgumentError("fusion needs at least one system");
  const ScoreSet& ref = systems.front();
  for (std::size_t k = 0; k < systems.size(); ++k) {
    const auto& sys = systems[k];
    if (sys.trials.size() != sys.scores.size()) throw ShapeError("score set has mismatched trials and scores");
    if (sys.size() != ref.size())
      throw AlignmentError("system " + std::to_string(k) + " has " + std::to_string(sys.size()) +
                           " trials, expected " + std::to_string(ref.size()));
    for (std::size_t i = 0; i < sys.size(); ++i) {
      const auto &a = sys.trials[i], &b = ref.trials[i];
      if (a.enroll != b.enroll || a.test != b.test || a.label != b.label)
        throw AlignmentError("system " + std::to_string(k) + " trial " + std::to_string(i) + " (" + a.enroll +
                             " " + a.test + ") does not match (" + b.enroll + " " + b.test + ")");
    }
  }
  ScoreSet out = ref;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double sum = 0.0;
    for (const auto& sys : systems) sum += sys.scores[i];
    out.scores[i] = sum / static_cast<double>(systems.size());
  }
  return out;
}

SystemMetrics Evaluate(const std::string& name, const ScoreSet& set, const DcfParams& params) {
  const auto s = SplitByLabel(set);
  SystemMetrics m;
  m.name = name;
  m.n_target = s.target.size();
  m.n_nontarget = s.nontarget.size();
  m.eer = ComputeEer(s.target, s.nontarget);
  m.min_dcf = ComputeMinDcf(s.target, s.nontarget, params);
  m.act_dcf = ComputeActDcf(s.target, s.nontarget, params);
  return m;
}

std::string FormatReport(const std::vector<SystemMetrics>& systems, const DcfParams& params) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %8s %8s %10s %10s\n", "system", "targets", "nontgts", "EER%",
                "minDCF");
  std::string header(line);
  header.insert(header.size() - 1, "     actDCF");
  out << header;
  for (const auto& m : systems) {
    std::snprintf(line, sizeof(line), "%-24s %8zu %8zu %10.4f %10.4f %10.4f\n", m.name.c_str(), m.n_target,
                  m.n_nontarget, 100.0 * m.eer, m.min_dcf, m.act_dcf);
    out << line;
  }
  out << "\n[metrics]\n";
  out << "priors=";
  for (std::size_t i = 0; i < params.priors.size(); ++i) out << (i ? "," : "") << params.priors[i];
  out << "\nc_miss=" << params.c_miss << "\nc_fa=" << params.c_fa << '\n';
  for (const auto& m : systems) {
    std::snprintf(line, sizeof(line), "%s.eer=%.10g\n%s.min_dcf=%.10g\n%s.act_dcf=%.10g\n", m.name.c_str(), m.eer,
                  m.name.c_str(), m.min_dcf, m.name.c_str(), m.act_dcf);
    out << line;
  }
  return out.str();
}

}  // namespace spkv
