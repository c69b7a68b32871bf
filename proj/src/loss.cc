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

#include "spkv/loss.h"

#include <charconv>
#include <sstream>

#include "spkv/errors.h"

namespace spkv {

void ValidateSchedule(const MarginSchedule& sched) {
  if (sched.duration_iters < 1) throw ConfigError("margin schedule duration must be >= 1 iteration");
  if (sched.kind == MarginSchedule::Kind::kExponential && !(sched.start > 0.0))
    throw ConfigError("exponential margin schedule needs a start value > 0");
  if (!std::isfinite(sched.start) || !std::isfinite(sched.end))
    throw ConfigError("margin schedule values must be finite");
}

double MarginAt(const MarginSchedule& sched, long iter) {
  ValidateSchedule(sched);
  if (iter < 0) throw ArgumentError("iteration must be >= 0");
  if (iter >= sched.duration_iters) return sched.end;
  const double frac = static_cast<double>(iter) / static_cast<double>(sched.duration_iters);
  if (sched.kind == MarginSchedule::Kind::kLinear)
    return sched.start + (sched.end - sched.start) * frac;
  return sched.start * std::pow(sched.end / sched.start, frac);
}

MarginSchedule ParseSchedule(const std::string& text, long default_duration) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto number = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(parts[i], &used);
      if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + parts[i] + "' in margin schedule '" + text + "'");
    }
  };
  MarginSchedule sched;
  if (parts.size() == 2 && parts[0] == "const") {
    sched = MarginSchedule::Constant(number(1));
  } else if ((parts.size() == 3 || parts.size() == 4) && (parts[0] == "linear" || parts[0] == "exp")) {
    sched.kind = parts[0] == "exp" ? MarginSchedule::Kind::kExponential : MarginSchedule::Kind::kLinear;
    sched.start = number(1);
    sched.end = number(2);
    sched.duration_iters = parts.size() == 4 ? static_cast<long>(number(3)) : default_duration;
  } else {
    throw ConfigError("margin schedule '" + text +
                      "' must look like const:V, linear:START:END[:ITERS] or exp:START:END[:ITERS]");
  }
  ValidateSchedule(sched);
  return sched;
}

std::string FormatSchedule(const MarginSchedule& sched) {
  auto text = [](double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof(buf), v).ptr);
  };
  return std::string(sched.kind == MarginSchedule::Kind::kExponential ? "exp" : "linear") + ':' + text(sched.start) +
         ':' + text(sched.end) + ':' + std::to_string(sched.duration_iters);
}

}  // namespace spkv
