#include "phenocate/survdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>

#include "phenocate/error.hpp"
#include "phenocate/io.hpp"

namespace phenocate {

namespace {

void validate_subject(const Subject& s, std::size_t row, std::size_t p1, std::size_t p2) {
  const std::string where = "row " + std::to_string(row);
  if (!(s.time > 0.0) || !std::isfinite(s.time)) {
    throw DataError(where + ": time must be positive and finite");
  }
  if (s.modifiers.size() != p1) throw DataError(where + ": modifier count mismatch");
  if (s.confounders.size() != p2) throw DataError(where + ": confounder count mismatch");
  for (auto m : s.modifiers) {
    if (m > 1) throw DataError(where + ": modifier not in {0,1}");
  }
  for (double c : s.confounders) {
    if (!std::isfinite(c)) throw DataError(where + ": non-finite confounder");
  }
}

double quantile_type7(std::vector<double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

bool parse_binary(std::string_view token, const std::string& what) {
  const double v = io::parse_double(token, what);
  if (v == 0.0) return false;
  if (v == 1.0) return true;
  throw DataError(what + ": value must be 0 or 1");
}

}  // namespace

SurvivalFrame::SurvivalFrame(std::vector<Subject> subjects, std::vector<std::string> modifier_names,
                             std::vector<std::string> confounder_names, double horizon)
    : subjects_(std::move(subjects)),
      modifier_names_(std::move(modifier_names)),
      confounder_names_(std::move(confounder_names)),
      horizon_(horizon) {
  if (subjects_.empty()) throw DataError("survival frame is empty");
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    validate_subject(subjects_[i], i, modifier_names_.size(), confounder_names_.size());
  }
  if (!(horizon_ > 0.0)) horizon_ = max_time();
}

double SurvivalFrame::max_time() const {
  double t = 0.0;
  for (const auto& s : subjects_) t = std::max(t, s.time);
  return t;
}

std::size_t SurvivalFrame::event_count() const {
  return static_cast<std::size_t>(
      std::count_if(subjects_.begin(), subjects_.end(), [](const Subject& s) { return s.event; }));
}

SurvivalFrame SurvivalFrame::select(std::span<const std::size_t> rows) const {
  std::vector<Subject> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(subjects_.at(r));
  return SurvivalFrame(std::move(out), modifier_names_, confounder_names_, horizon_);
}

CsvSchema CsvSchema::for_frame(const SurvivalFrame& frame) {
  CsvSchema schema;
  schema.modifiers = frame.modifier_names();
  schema.confounders = frame.confounder_names();
  schema.horizon = frame.horizon();
  return schema;
}

SurvivalFrame load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  const std::string text = io::read_text(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  const auto header = io::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(header[i], i);

  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw DataError(path.string() + ": missing column '" + name + "'");
    return it->second;
  };
  const auto c_id = require(schema.id);
  const auto c_time = require(schema.time);
  const auto c_event = require(schema.event);
  const auto c_z = require(schema.treatment);

  std::vector<std::string> modifier_names = schema.modifiers;
  if (schema.modifiers.empty() && schema.confounders.empty()) {
    for (const auto& h : header) {
      if (h != schema.id && h != schema.time && h != schema.event && h != schema.treatment) {
        modifier_names.push_back(h);
      }
    }
  }
  std::vector<std::size_t> c_mod, c_conf;
  for (const auto& m : modifier_names) c_mod.push_back(require(m));
  for (const auto& c : schema.confounders) c_conf.push_back(require(c));

  std::vector<Subject> subjects;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = io::split_csv_line(line);
    const std::string where = path.string() + " row " + std::to_string(row);
    if (cells.size() != header.size()) throw DataError(where + ": wrong number of cells");
    Subject s;
    const double id = io::parse_double(cells[c_id], where + " column " + schema.id);
    if (id != std::floor(id)) throw DataError(where + ": id must be an integer");
    s.id = static_cast<std::int64_t>(id);
    s.time = io::parse_double(cells[c_time], where + " column " + schema.time);
    if (!(s.time > 0.0)) throw DataError(where + ": time must be positive");
    s.event = parse_binary(cells[c_event], where + " column " + schema.event);
    s.treatment = parse_binary(cells[c_z], where + " column " + schema.treatment);
    for (std::size_t j = 0; j < c_mod.size(); ++j) {
      s.modifiers.push_back(parse_binary(cells[c_mod[j]], where + " column " + modifier_names[j]));
    }
    for (std::size_t j = 0; j < c_conf.size(); ++j) {
      s.confounders.push_back(
          io::parse_double(cells[c_conf[j]], where + " column " + schema.confounders[j]));
    }
    subjects.push_back(std::move(s));
    ++row;
  }
  return SurvivalFrame(std::move(subjects), std::move(modifier_names), schema.confounders,
                       schema.horizon);
}

std::string to_csv(const SurvivalFrame& frame) {
  std::string out = "id,time,event,z";
  for (const auto& m : frame.modifier_names()) out += "," + m;
  for (const auto& c : frame.confounder_names()) out += "," + c;
  out += '\n';
  for (const auto& s : frame.subjects()) {
    out += std::to_string(s.id);
    out += ',' + io::fmt(s.time);
    out += s.event ? ",1" : ",0";
    out += s.treatment ? ",1" : ",0";
    for (auto m : s.modifiers) out += m ? ",1" : ",0";
    for (double c : s.confounders) out += ',' + io::fmt(c);
    out += '\n';
  }
  return out;
}

void save_csv(const SurvivalFrame& frame, const std::filesystem::path& path) {
  io::write_text(path, to_csv(frame));
}

double KaplanMeier::operator()(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

KaplanMeier kaplan_meier(const SurvivalFrame& frame, std::span<const double> weights) {
  const auto& subjects = frame.subjects();
  if (!weights.empty() && weights.size() != subjects.size()) {
    throw DataError("kaplan_meier: weight count does not match subject count");
  }
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  // time -> (event weight, total weight leaving the risk set)
  std::map<double, std::pair<double, double>> table;
  double at_risk = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    auto& cell = table[subjects[i].time];
    if (subjects[i].event) cell.first += weight(i);
    cell.second += weight(i);
    at_risk += weight(i);
  }

  KaplanMeier km;
  double s = 1.0;
  double greenwood = 0.0;
  constexpr double z975 = 1.959963984540054;
  for (const auto& [t, cell] : table) {
    const auto [d, leaving] = cell;
    if (d > 0.0) {
      s *= 1.0 - d / at_risk;
      if (at_risk > d) {
        greenwood += d / (at_risk * (at_risk - d));
      } else {
        greenwood = std::numeric_limits<double>::infinity();
      }
      km.times.push_back(t);
      km.survival.push_back(s);
      const double se = s * std::sqrt(greenwood);
      km.std_error.push_back(std::isfinite(se) ? se : 0.0);
      if (s > 0.0 && s < 1.0 && std::isfinite(greenwood)) {
        const double se_loglog = std::sqrt(greenwood) / std::abs(std::log(s));
        km.lower.push_back(std::pow(s, std::exp(z975 * se_loglog)));
        km.upper.push_back(std::pow(s, std::exp(-z975 * se_loglog)));
      } else {
        km.lower.push_back(s);
        km.upper.push_back(s);
      }
    }
    at_risk -= leaving;
  }
  return km;
}

std::size_t IntervalScheme::locate(double t) const {
  if (count() == 0) throw DataError("interval scheme has no intervals");
  if (t < cuts.front() || t > cuts.back()) {
    throw DataError("time " + io::fmt(t) + " outside interval scheme [0, " + io::fmt(cuts.back()) +
                    "]");
  }
  auto it = std::upper_bound(cuts.begin(), cuts.end(), t);
  const auto j = static_cast<std::size_t>(it - cuts.begin());
  return std::min(j, count()) - 1;
}

IntervalScheme make_intervals(const SurvivalFrame& frame, std::size_t h, CutStrategy strategy) {
  if (h < 2) throw DataError("make_intervals: need at least 2 intervals");
  const double t_max = frame.max_time();
  IntervalScheme scheme;
  scheme.cuts.reserve(h + 1);
  scheme.cuts.push_back(0.0);
  if (strategy == CutStrategy::uniform) {
    for (std::size_t j = 1; j < h; ++j) {
      scheme.cuts.push_back(t_max * static_cast<double>(j) / static_cast<double>(h));
    }
    scheme.cuts.push_back(t_max);
    return scheme;
  }

  std::vector<double> observed;
  std::vector<double> event_times;
  for (const auto& s : frame.subjects()) {
    observed.push_back(s.time);
    if (s.event) event_times.push_back(s.time);
  }
  std::sort(observed.begin(), observed.end());
  const auto distinct = static_cast<std::size_t>(
      std::unique(observed.begin(), observed.end()) - observed.begin());
  if (distinct < h) {
    throw DataError("make_intervals: " + std::to_string(h) + " intervals requested but only " +
                    std::to_string(distinct) + " distinct observed times");
  }
  std::sort(event_times.begin(), event_times.end());
  if (event_times.size() < h) {
    throw DataError("make_intervals: fewer events than requested intervals");
  }
  for (std::size_t j = 1; j < h; ++j) {
    const double c = quantile_type7(event_times, static_cast<double>(j) / static_cast<double>(h));
    if (!(c > scheme.cuts.back())) {
      throw DataError("make_intervals: tied event times give a degenerate quantile cut");
    }
    scheme.cuts.push_back(c);
  }
  if (!(t_max > scheme.cuts.back())) {
    throw DataError("make_intervals: last quantile cut reaches the maximum observed time");
  }
  scheme.cuts.push_back(t_max);
  return scheme;
}

std::vector<DiscreteOutcome> discretize(const SurvivalFrame& frame, const IntervalScheme& scheme) {
  std::vector<DiscreteOutcome> out;
  out.reserve(frame.size());
  for (const auto& s : frame.subjects()) {
    DiscreteOutcome d;
    d.interval = scheme.locate(s.time);
    d.event = s.event;
    d.past_midpoint = s.time >= scheme.midpoint(d.interval);
    out.push_back(d);
  }
  return out;
}

TimeGrid::TimeGrid(std::vector<double> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw DataError("time grid needs at least 2 points");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!std::isfinite(points_[i]) || points_[i] < 0.0) {
      throw DataError("time grid points must be finite and nonnegative");
    }
    if (i > 0 && !(points_[i] > points_[i - 1])) {
      throw DataError("time grid must be strictly increasing");
    }
  }
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t count) {
  if (!(horizon > 0.0)) throw DataError("grid horizon must be positive");
  std::vector<double> pts(count);
  for (std::size_t i = 0; i < count; ++i) {
    pts[i] = horizon * static_cast<double>(i + 1) / static_cast<double>(count);
  }
  return TimeGrid(std::move(pts));
}

TimeGrid TimeGrid::linspace(double start, double end, std::size_t count) {
  if (count < 2) throw DataError("time grid needs at least 2 points");
  std::vector<double> pts(count);
  for (std::size_t i = 0; i < count; ++i) {
    pts[i] = start + (end - start) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  pts.back() = end;
  return TimeGrid(std::move(pts));
}

std::vector<double> TimeGrid::trapezoid_weights() const {
  std::vector<double> w(points_.size(), 0.0);
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const double half = 0.5 * (points_[i + 1] - points_[i]);
    w[i] += half;
    w[i + 1] += half;
  }
  return w;
}

}  // namespace phenocate
