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

#include "spkv/scoring.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "spkv/errors.h"

namespace spkv {

namespace {

std::string ReadText(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

TrialLabel ParseLabel(const std::string& tok, const std::string& where) {
  if (tok == "target") return TrialLabel::kTarget;
  if (tok == "nontarget") return TrialLabel::kNontarget;
  throw FormatError(where + ": label must be 'target' or 'nontarget', got '" + tok + "'");
}

const char* LabelName(TrialLabel l) { return l == TrialLabel::kTarget ? "target" : "nontarget"; }

std::vector<std::string> Tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

double CosineScore(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw ShapeError("embedding dims differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.size() == 0) throw ShapeError("empty embeddings");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0 && nb > 0.0)) throw NumericError("zero-norm embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

bool ScoreSet::labeled() const {
  if (trials.empty()) return false;
  for (const auto& t : trials)
    if (t.label == TrialLabel::kUnknown) return false;
  return true;
}

void CheckTrials(const TrialList& trials) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& t : trials)
    if (!seen.emplace(t.enroll, t.test).second)
      throw FormatError("duplicate trial " + t.enroll + " " + t.test);
}

TrialList ParseTrials(const std::string& text, const std::string& source) {
  TrialList trials;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = Tokens(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (tok.size() < 2 || tok.size() > 3) throw FormatError(where + ": expected 'enroll test [label]'");
    Trial t{tok[0], tok[1], TrialLabel::kUnknown};
    if (tok.size() == 3) t.label = ParseLabel(tok[2], where);
    trials.push_back(std::move(t));
  }
  CheckTrials(trials);
  return trials;
}

TrialList ReadTrials(const std::string& path) { return ParseTrials(ReadText(path), path); }

void WriteTrials(const std::string& path, const TrialList& trials) {
  std::ostringstream out;
  for (const auto& t : trials) {
    out << t.enroll << ' ' << t.test;
    if (t.label != TrialLabel::kUnknown) out << ' ' << LabelName(t.label);
    out << '\n';
  }
  WriteText(path, out.str());
}

ScoreSet ParseScores(const std::string& text, const std::string& source) {
  ScoreSet set;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = Tokens(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (tok.size() < 3 || tok.size() > 4) throw FormatError(where + ": expected 'enroll test score [label]'");
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(tok[2], &used);
      if (used != tok[2].size()) throw std::invalid_argument(tok[2]);
    } catch (const std::exception&) {
      throw FormatError(where + ": bad score '" + tok[2] + "'");
    }
    if (!std::isfinite(score)) throw FormatError(where + ": non-finite score");
    Trial t{tok[0], tok[1], TrialLabel::kUnknown};
    if (tok.size() == 4) t.label = ParseLabel(tok[3], where);
    set.trials.push_back(std::move(t));
    set.scores.push_back(score);
  }
  CheckTrials(set.trials);
  return set;
}

ScoreSet ReadScores(const std::string& path) { return ParseScores(ReadText(path), path); }

std::string FormatScores(const ScoreSet& set) {
  if (set.trials.size() != set.scores.size()) throw ShapeError("score set has mismatched trials and scores");
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& t = set.trials[i];
    std::snprintf(buf, sizeof(buf), "%.6f", set.scores[i]);
    out += t.enroll + ' ' + t.test + ' ' + buf;
    if (t.label != TrialLabel::kUnknown) out += std::string(" ") + LabelName(t.label);
    out += '\n';
  }
  return out;
}

void WriteScores(const std::string& path, const ScoreSet& set) { WriteText(path, FormatScores(set)); }

Eigen::VectorXd ResolveEmbedding(const std::string& id, const EmbeddingStore& store, const EnrollMap& enroll) {
  auto lookup = [&](const std::string& utt) -> const Eigen::VectorXd& {
    auto it = store.find(utt);
    if (it == store.end()) throw LookupError("no embedding for '" + utt + "'");
    return it->second;
  };
  auto e = enroll.find(id);
  if (e == enroll.end()) return lookup(id);
  if (e->second.empty()) throw LookupError("enrollment model '" + id + "' lists no utterances");
  Eigen::VectorXd sum = lookup(e->second.front());
  for (std::size_t i = 1; i < e->second.size(); ++i) {
    const auto& v = lookup(e->second[i]);
    if (v.size() != sum.size()) throw ShapeError("enrollment '" + id + "' mixes embedding dims");
    sum += v;
  }
  const double norm = sum.norm();
  if (!(norm > 0.0)) throw NumericError("enrollment '" + id + "' averages to zero");
  return sum / norm;
}

ScoreSet ScoreTrials(const TrialList& trials, const EmbeddingStore& store, const EnrollMap& enroll) {
  CheckTrials(trials);
  ScoreSet set;
  set.trials = trials;
  set.scores.reserve(trials.size());
  std::map<std::string, Eigen::VectorXd> cache;
  auto get = [&](const std::string& id) -> const Eigen::VectorXd& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, ResolveEmbedding(id, store, enroll)).first;
    return it->second;
  };
  for (const auto& t : trials) set.scores.push_back(CosineScore(get(t.enroll), get(t.test)));
  return set;
}

}  // namespace spkv
