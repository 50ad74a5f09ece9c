#include "phenocate/nnsurv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "phenocate/error.hpp"

namespace phenocate::nnsurv {

void NetConfig::validate() const {
  if (input_dim == 0 || hidden_layers == 0 || hidden_units == 0 || output_dim == 0) {
    throw ConfigError("network dimensions must all be positive");
  }
  if (!(training.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (training.batch_size == 0 || training.epochs == 0) {
    throw ConfigError("batch size and epoch budget must be positive");
  }
  if (training.validation_fraction < 0.0 || training.validation_fraction >= 1.0) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
}

std::size_t NetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool NetParams::operator==(const NetParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

NetParams init_params(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  NetParams params;
  std::size_t in = config.input_dim;
  for (std::size_t l = 0; l <= config.hidden_layers; ++l) {
    const std::size_t out = l == config.hidden_layers ? config.output_dim : config.hidden_units;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    Layer layer;
    layer.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    layer.bias.resize(static_cast<Eigen::Index>(out));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = unif(rng);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = unif(rng);
    params.layers.push_back(std::move(layer));
    in = out;
  }
  return params;
}

std::vector<double> net_input(bool z, std::span<const std::uint8_t> x1) {
  std::vector<double> in;
  in.reserve(x1.size() + 1);
  in.push_back(z ? 1.0 : 0.0);
  for (auto v : x1) in.push_back(static_cast<double>(v));
  return in;
}

namespace {

double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

// Batch of distinct inputs with per-interval contribution counts:
// survived(u, j) subjects add -log(1 - h_uj), events(u, j) add -log h_uj.
struct Tally {
  Eigen::MatrixXd inputs;    // U x d
  Eigen::MatrixXd survived;  // U x h
  Eigen::MatrixXd events;    // U x h
  double total = 0.0;
};

void add_outcome(Tally& t, Eigen::Index u, const DiscreteOutcome& o) {
  const auto k = static_cast<Eigen::Index>(o.interval);
  for (Eigen::Index j = 0; j < k; ++j) t.survived(u, j) += 1.0;
  if (o.event) {
    t.events(u, k) += 1.0;
  } else if (o.past_midpoint) {
    t.survived(u, k) += 1.0;
  }
  t.total += 1.0;
}

Tally tally_examples(std::span<const Example> batch, std::size_t h) {
  std::map<std::vector<double>, Eigen::Index> index;
  for (const auto& ex : batch) index.emplace(ex.input, 0);
  Tally t;
  const auto u = static_cast<Eigen::Index>(index.size());
  const auto d = static_cast<Eigen::Index>(batch.front().input.size());
  t.inputs.resize(u, d);
  t.survived = Eigen::MatrixXd::Zero(u, static_cast<Eigen::Index>(h));
  t.events = Eigen::MatrixXd::Zero(u, static_cast<Eigen::Index>(h));
  Eigen::Index next = 0;
  for (auto& [in, idx] : index) {
    idx = next;
    for (Eigen::Index c = 0; c < d; ++c) t.inputs(next, c) = in[static_cast<std::size_t>(c)];
    ++next;
  }
  for (const auto& ex : batch) {
    if (ex.outcome.interval >= h) throw DataError("loss: interval index exceeds output dimension");
    add_outcome(t, index.at(ex.input), ex.outcome);
  }
  return t;
}

struct Activations {
  std::vector<Eigen::MatrixXd> pre;   // per layer, U x out
  std::vector<Eigen::MatrixXd> post;  // post[0] = inputs
};

Activations run(const NetParams& params, const Eigen::MatrixXd& inputs) {
  Activations act;
  act.post.push_back(inputs);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = act.post.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    act.pre.push_back(z);
    if (l + 1 < params.layers.size()) {
      act.post.push_back(z.cwiseMax(0.0));
    } else {
      act.post.push_back(z.unaryExpr([](double a) { return sigmoid(a); }));
    }
  }
  return act;
}

// Loss of a tally and, optionally, its gradient.
double evaluate(const NetParams& params, const Tally& tally, NetParams* grad) {
  const Activations act = run(params, tally.inputs);
  const Eigen::MatrixXd& hz = act.post.back();
  const double lo = kHazardClamp, hi = 1.0 - kHazardClamp;
  double total = 0.0;
  Eigen::MatrixXd d_logit = Eigen::MatrixXd::Zero(hz.rows(), hz.cols());
  for (Eigen::Index u = 0; u < hz.rows(); ++u) {
    for (Eigen::Index j = 0; j < hz.cols(); ++j) {
      const double h = hz(u, j);
      const double c = std::clamp(h, lo, hi);
      const bool inside = h > lo && h < hi;
      const double s = tally.survived(u, j);
      const double e = tally.events(u, j);
      if (s > 0.0) {
        total -= s * std::log1p(-c);
        if (inside) d_logit(u, j) += s * h;
      }
      if (e > 0.0) {
        total -= e * std::log(c);
        if (inside) d_logit(u, j) -= e * (1.0 - h);
      }
    }
  }
  const double mean = total / tally.total;
  if (grad == nullptr) return mean;

  d_logit /= tally.total;
  grad->layers.resize(params.layers.size());
  Eigen::MatrixXd delta = d_logit;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    auto& g = grad->layers[l];
    g.weight = delta.transpose() * act.post[l];
    g.bias = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * params.layers[l].weight;
      const Eigen::MatrixXd& pre = act.pre[l - 1];
      delta = back.cwiseProduct(pre.unaryExpr([](double a) { return a > 0.0 ? 1.0 : 0.0; }));
    }
  }
  return mean;
}

void check_input(const NetParams& params, std::span<const double> input) {
  if (input.size() != params.input_dim()) {
    throw DataError("network input has " + std::to_string(input.size()) + " entries, expected " +
                    std::to_string(params.input_dim()));
  }
}

struct Adam {
  NetParams m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;

  explicit Adam(const NetParams& like) {
    for (const auto& l : like.layers) {
      m.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                          Eigen::VectorXd::Zero(l.bias.size())});
    }
    v = m;
  }

  void step(NetParams& p, const NetParams& g, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      update(p.layers[l].weight, m.layers[l].weight, v.layers[l].weight, g.layers[l].weight, lr, c1, c2);
      update(p.layers[l].bias, m.layers[l].bias, v.layers[l].bias, g.layers[l].bias, lr, c1, c2);
    }
  }

  template <class M>
  void update(M& p, M& m1, M& m2, const M& g, double lr, double c1, double c2) {
    m1 = beta1 * m1 + (1.0 - beta1) * g;
    m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
  }
};

}  // namespace

std::vector<double> forward(const NetParams& params, std::span<const double> input) {
  check_input(params, input);
  Eigen::MatrixXd in(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t c = 0; c < input.size(); ++c) in(0, static_cast<Eigen::Index>(c)) = input[c];
  const Eigen::MatrixXd out = run(params, in).post.back();
  std::vector<double> h(static_cast<std::size_t>(out.cols()));
  for (std::size_t j = 0; j < h.size(); ++j) {
    h[j] = out(0, static_cast<Eigen::Index>(j));
    if (!std::isfinite(h[j])) throw NumericalError("forward: non-finite hazard (NaN in parameters?)");
    h[j] = std::clamp(h[j], std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon() / 2);
  }
  return h;
}

std::vector<double> discrete_survival(const NetParams& params, std::span<const double> input) {
  const auto h = forward(params, input);
  std::vector<double> s(h.size());
  double acc = 1.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    acc *= 1.0 - h[j];
    s[j] = acc;
  }
  return s;
}

double loss(const NetParams& params, std::span<const Example> batch) {
  if (batch.empty()) throw DataError("loss: empty batch");
  for (const auto& ex : batch) check_input(params, ex.input);
  return evaluate(params, tally_examples(batch, params.output_dim()), nullptr);
}

NetParams backward(const NetParams& params, std::span<const Example> batch) {
  if (batch.empty()) throw DataError("backward: empty batch");
  for (const auto& ex : batch) check_input(params, ex.input);
  NetParams grad;
  evaluate(params, tally_examples(batch, params.output_dim()), &grad);
  return grad;
}

TrainResult train(const SurvivalFrame& frame, const IntervalScheme& scheme, const NetConfig& config) {
  config.validate();
  if (config.output_dim != scheme.count()) {
    throw ConfigError("network output dimension must equal the interval count");
  }
  if (config.input_dim != frame.modifier_count() + 1) {
    throw ConfigError("network input dimension must be 1 + modifier count");
  }
  const auto outcomes = discretize(frame, scheme);
  const std::size_t n = frame.size();
  const auto h = static_cast<Eigen::Index>(config.output_dim);
  const auto& opt = config.training;

  // Distinct inputs shared by all batches.
  std::map<std::vector<double>, std::size_t> pattern_index;
  std::vector<std::size_t> pattern(n);
  std::vector<std::vector<double>> patterns;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = frame.subjects()[i];
    auto in = net_input(s.treatment, s.modifiers);
    auto [it, inserted] = pattern_index.emplace(in, patterns.size());
    if (inserted) patterns.push_back(std::move(in));
    pattern[i] = it->second;
  }

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(opt.validation_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  std::vector<std::size_t> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  const auto d = static_cast<Eigen::Index>(config.input_dim);
  std::vector<Eigen::Index> local(patterns.size(), -1);
  auto build_tally = [&](std::span<const std::size_t> rows) {
    std::vector<std::size_t> used;
    for (auto r : rows) {
      if (local[pattern[r]] < 0) {
        local[pattern[r]] = static_cast<Eigen::Index>(used.size());
        used.push_back(pattern[r]);
      }
    }
    Tally t;
    const auto u = static_cast<Eigen::Index>(used.size());
    t.inputs.resize(u, d);
    t.survived = Eigen::MatrixXd::Zero(u, h);
    t.events = Eigen::MatrixXd::Zero(u, h);
    for (Eigen::Index k = 0; k < u; ++k) {
      const auto& in = patterns[used[static_cast<std::size_t>(k)]];
      for (Eigen::Index c = 0; c < d; ++c) t.inputs(k, c) = in[static_cast<std::size_t>(c)];
    }
    for (auto r : rows) add_outcome(t, local[pattern[r]], outcomes[r]);
    for (auto p : used) local[p] = -1;
    return t;
  };

  const bool use_validation = n_val > 0;
  Tally val_tally;
  if (use_validation) val_tally = build_tally(val_rows);

  TrainResult result;
  NetParams params = init_params(config, opt.seed);
  result.params = params;
  Adam adam(params);
  NetParams grad;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const std::size_t batch = std::min(opt.batch_size, train_rows.size());

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(train_rows.begin(), train_rows.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_rows.size(); start += batch) {
      const std::size_t stop = std::min(start + batch, train_rows.size());
      const auto rows = std::span<const std::size_t>(train_rows).subspan(start, stop - start);
      const Tally t = build_tally(rows);
      const double l = evaluate(params, t, &grad);
      if (!std::isfinite(l)) {
        throw NumericalError("nnsurv training diverged at epoch " + std::to_string(epoch));
      }
      epoch_loss += l * static_cast<double>(rows.size());
      adam.step(params, grad, opt.learning_rate);
    }
    epoch_loss /= static_cast<double>(train_rows.size());
    result.train_loss.push_back(epoch_loss);

    if (!use_validation) {
      result.params = params;
      result.best_epoch = epoch;
      continue;
    }
    const double vl = evaluate(params, val_tally, nullptr);
    if (!std::isfinite(vl)) {
      throw NumericalError("nnsurv training diverged at epoch " + std::to_string(epoch));
    }
    result.validation_loss.push_back(vl);
    if (vl < best) {
      best = vl;
      since_best = 0;
      result.params = params;
      result.best_epoch = epoch;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }
  return result;
}

namespace {

// 8-point Gauss-Legendre on [-1, 1].
constexpr double kGlNodes[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                0.7966664774136267,  0.9602898564975363};
constexpr double kGlWeights[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                  0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                  0.2223810344533745, 0.1012285362903763};

std::vector<double> log_rates(const std::vector<double>& h, const IntervalScheme& scheme) {
  if (h.size() != scheme.count()) throw DataError("smooth: hazard count != interval count");
  std::vector<double> out(h.size());
  for (std::size_t j = 0; j < h.size(); ++j) {
    const double rate = -std::log1p(-h[j]) / scheme.width(j);
    out[j] = std::log(std::max(rate, 1e-12));
  }
  return out;
}

std::vector<double> midpoints(const IntervalScheme& scheme) {
  std::vector<double> m(scheme.count());
  for (std::size_t j = 0; j < m.size(); ++j) m[j] = scheme.midpoint(j);
  return m;
}

}  // namespace

SmoothedHazard::SmoothedHazard(std::vector<double> discrete_hazards, const IntervalScheme& scheme)
    : discrete_(std::move(discrete_hazards)),
      log_rate_(natural_interpolate(midpoints(scheme), log_rates(discrete_, scheme))) {
  breaks_.push_back(0.0);
  for (double m : log_rate_.nodes()) breaks_.push_back(m);
  cumulative_.push_back(0.0);
  for (std::size_t i = 1; i < breaks_.size(); ++i) {
    cumulative_.push_back(cumulative_.back() + integrate(breaks_[i - 1], breaks_[i]));
  }
}

double SmoothedHazard::hazard(double t) const { return std::exp(log_rate_(t)); }

double SmoothedHazard::integrate(double a, double b) const {
  if (!(b > a)) return 0.0;
  constexpr int pieces = 4;
  const double step = (b - a) / pieces;
  double total = 0.0;
  for (int p = 0; p < pieces; ++p) {
    const double lo = a + p * step;
    const double mid = lo + 0.5 * step;
    for (int k = 0; k < 8; ++k) total += kGlWeights[k] * hazard(mid + 0.5 * step * kGlNodes[k]);
  }
  return total * 0.5 * step;
}

double SmoothedHazard::cumhaz(double t) const {
  if (t <= 0.0) return 0.0;
  auto it = std::upper_bound(breaks_.begin(), breaks_.end(), t);
  const auto i = static_cast<std::size_t>(it - breaks_.begin()) - 1;
  return cumulative_[i] + integrate(breaks_[i], t);
}

SmoothedHazard smooth(const NetParams& params, bool z, std::span<const std::uint8_t> x1,
                      const IntervalScheme& scheme) {
  return SmoothedHazard(forward(params, net_input(z, x1)), scheme);
}

nlohmann::json to_json(const NetParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    }
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return {{"activation", "relu"}, {"output", "sigmoid"}, {"layers", layers}};
}

NetParams params_from_json(const nlohmann::json& j) {
  NetParams p;
  for (const auto& jl : j.at("layers")) {
    const auto rows = jl.at("rows").get<Eigen::Index>();
    const auto cols = jl.at("cols").get<Eigen::Index>();
    const auto w = jl.at("weight").get<std::vector<double>>();
    const auto b = jl.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw DataError("network JSON: layer shape mismatch");
    }
    Layer l;
    l.weight.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
    }
    l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
    p.layers.push_back(std::move(l));
  }
  if (p.layers.empty()) throw DataError("network JSON: no layers");
  return p;
}

}  // namespace phenocate::nnsurv
