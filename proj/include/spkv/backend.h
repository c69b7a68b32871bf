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

// Detection metrics, logistic-regression calibration and score fusion.

#ifndef SPKV_BACKEND_H_
#define SPKV_BACKEND_H_

#include <string>
#include <vector>

#include "spkv/scoring.h"

namespace spkv {

struct DcfParams {
  std::vector<double> priors{0.01, 0.005};  // normalized costs are averaged over these
  double c_miss = 1.0;
  double c_fa = 1.0;

  static DcfParams Single(double p_target, double c_miss = 1.0, double c_fa = 1.0) {
    return {{p_target}, c_miss, c_fa};
  }
};

void CheckDcfParams(const DcfParams& p);

struct SplitScores {
  std::vector<double> target;
  std::vector<double> nontarget;
};

// Separates a labeled score set; both classes must be present.
SplitScores SplitByLabel(const ScoreSet& set);

// Threshold sweep over midpoints between distinct scores plus both outer
// extremes; a target is missed when score < threshold, a nontarget is
// accepted when score > threshold. The EER is the linear interpolation of
// (P_miss, P_fa) at the first sweep step where P_miss reaches P_fa.
double ComputeEer(const std::vector<double>& target, const std::vector<double>& nontarget);
double ComputeEer(const ScoreSet& set);

// Minimum normalized DCF over the same thresholds, averaged over the priors.
double ComputeMinDcf(const std::vector<double>& target, const std::vector<double>& nontarget,
                     const DcfParams& params = {});
double ComputeMinDcf(const ScoreSet& set, const DcfParams& params = {});

// Normalized DCF at the Bayes threshold log(c_fa (1-p) / (c_miss p)) for LLR
// scores; a trial is accepted when llr > threshold.
double ComputeActDcf(const std::vector<double>& target, const std::vector<double>& nontarget,
                     const DcfParams& params = {});
double ComputeActDcf(const ScoreSet& set, const DcfParams& params = {});

double BayesThreshold(double p_target, double c_miss = 1.0, double c_fa = 1.0);

struct CalibrationModel {
  double a = 1.0;
  double b = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
};

struct CalibrationOptions {
  double prior = 0.01;  // effective target prior weighting the two classes
  int max_iters = 100;
  double tolerance = 1e-8;  // on the gradient norm of the weighted objective
};

// Prior-weighted logistic regression: maximizes
//   p/Nt * sum_tar log sig(z) + (1-p)/Nn * sum_non log sig(-z),
//   z = a*s + b + logit(p)
// with damped Newton steps, so a*s + b is a log-likelihood ratio.
CalibrationModel CalibrateFit(const ScoreSet& dev, const CalibrationOptions& opt = {});
CalibrationModel CalibrateFit(const std::vector<double>& target, const std::vector<double>& nontarget,
                              const CalibrationOptions& opt = {});

ScoreSet ApplyCalibration(const ScoreSet& set, const CalibrationModel& model);

void WriteCalibration(const std::string& path, const CalibrationModel& model);
CalibrationModel ReadCalibration(const std::string& path);

// Per-trial arithmetic mean over systems scored on identical trial lists.
ScoreSet Fuse(const std::vector<ScoreSet>& systems);

struct SystemMetrics {
  std::string name;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
  double eer = 0.0;
  double min_dcf = 0.0;
  double act_dcf = 0.0;
};

SystemMetrics Evaluate(const std::string& name, const ScoreSet& set, const DcfParams& params = {});

// Plain-text table followed by a key=value block.
std::string FormatReport(const std::vector<SystemMetrics>& systems, const DcfParams& params);

}  // namespace spkv

#endif  // SPKV_BACKEND_H_
