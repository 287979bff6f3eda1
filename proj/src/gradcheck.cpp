#include "ser/gradcheck.hpp"

#include "ser/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace ser {
namespace {

using T = Tensor<double>;
using Vec = std::vector<T>;

T rand_tensor(std::mt19937_64& gen, Shape shape, bool rg = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T::Array v(numel(shape));
  for (auto& x : v) x = u(gen);
  return T(std::move(shape), std::move(v), rg);
}

// Values bounded away from zero so relu's kink is never crossed.
T away_from_zero(std::mt19937_64& gen, Shape shape) {
  T t = rand_tensor(gen, std::move(shape));
  for (auto& x : t.mutable_values()) x = x < 0 ? x - 0.05 : x + 0.05;
  return t;
}

// Distinct, well separated values so max-pool argmaxes are stable.
T separated(std::mt19937_64& gen, Shape shape) {
  const Index n = numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = 0.01 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), gen);
  return T(std::move(shape), Eigen::Map<T::Array>(v.data(), n), true);
}

Index pick(std::mt19937_64& gen, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(gen);
}

double sum_projected(const T& y, const T::Array& r) { return (y.values() * r).sum(); }

double rel_err(double a, double n) { return std::abs(a - n) / std::max(1.0, std::abs(n)); }

}  // namespace

bool GradcheckReport::passed() const {
  if (!uncovered.empty()) return false;
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed(); });
}

double check_case(GradCase& c, std::mt19937_64& gen, double step) {
  T y = c.fn(c.inputs);
  T::Array r = rand_tensor(gen, y.shape().empty() ? Shape{1} : y.shape(), false).values();
  T proj(y.shape(), r);
  T loss = sum(mul(y, proj));
  for (auto& in : c.inputs) in.zero_grad();
  backward(loss);

  double worst = 0.0;
  for (auto& in : c.inputs) {
    if (!in.requires_grad()) continue;
    const T::Array analytic = in.grad();
    // Large inputs: a random sample of coordinates keeps trials cheap.
    std::vector<Index> coords(static_cast<std::size_t>(in.size()));
    for (Index i = 0; i < in.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    if (coords.size() > 48) {
      std::shuffle(coords.begin(), coords.end(), gen);
      coords.resize(48);
    }
    for (Index i : coords) {
      const double orig = in.values()[i];
      in.mutable_values()[i] = orig + step;
      const double up = sum_projected(c.fn(c.inputs), r);
      in.mutable_values()[i] = orig - step;
      const double down = sum_projected(c.fn(c.inputs), r);
      in.mutable_values()[i] = orig;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * step)));
    }
  }
  return worst;
}

std::vector<OpSuiteEntry> op_suite() {
  std::vector<OpSuiteEntry> s;
  s.push_back({"add", [](std::mt19937_64& g) {
                 const bool bcast = g() % 2;
                 Shape sa{pick(g, 1, 3), pick(g, 1, 4)};
                 Shape sb = bcast ? Shape{sa[1]} : sa;
                 return GradCase{{rand_tensor(g, sa), rand_tensor(g, sb)}, [](const Vec& v) { return add(v[0], v[1]); }};
               }});
  s.push_back({"mul", [](std::mt19937_64& g) {
                 Shape sh{pick(g, 1, 3), pick(g, 1, 4)};
                 return GradCase{{rand_tensor(g, sh), rand_tensor(g, sh)}, [](const Vec& v) { return mul(v[0], v[1]); }};
               }});
  s.push_back({"scale", [](std::mt19937_64& g) {
                 const double f = std::uniform_real_distribution<double>(-2, 2)(g);
                 return GradCase{{rand_tensor(g, {pick(g, 1, 5)})}, [f](const Vec& v) { return scale(v[0], f); }};
               }});
  s.push_back({"sum", [](std::mt19937_64& g) {
                 return GradCase{{rand_tensor(g, {pick(g, 1, 3), pick(g, 1, 4)})}, [](const Vec& v) { return sum(v[0]); }};
               }});
  s.push_back({"mean_over_axis", [](std::mt19937_64& g) {
                 const Index axis = pick(g, 0, 2);
                 return GradCase{{rand_tensor(g, {pick(g, 1, 3), pick(g, 1, 4), pick(g, 1, 3)})},
                                 [axis](const Vec& v) { return mean_over_axis(v[0], axis); }};
               }});
  s.push_back({"reshape", [](std::mt19937_64& g) {
                 const Index a = pick(g, 1, 3), b = pick(g, 1, 4);
                 return GradCase{{rand_tensor(g, {a, b})}, [a, b](const Vec& v) { return reshape(v[0], {b, a}); }};
               }});
  s.push_back({"permute", [](std::mt19937_64& g) {
                 std::vector<Index> order{0, 1, 2};
                 std::shuffle(order.begin(), order.end(), g);
                 return GradCase{{rand_tensor(g, {pick(g, 1, 3), pick(g, 1, 3), pick(g, 1, 4)})},
                                 [order](const Vec& v) { return permute(v[0], order); }};
               }});
  s.push_back({"transpose", [](std::mt19937_64& g) {
                 return GradCase{{rand_tensor(g, {pick(g, 1, 2), pick(g, 1, 3), pick(g, 1, 4)})},
                                 [](const Vec& v) { return transpose(v[0]); }};
               }});
  s.push_back({"concat", [](std::mt19937_64& g) {
                 const Index axis = pick(g, 0, 1);
                 Shape a{pick(g, 1, 3), pick(g, 1, 3)}, b = a;
                 b[static_cast<std::size_t>(axis)] = pick(g, 1, 3);
                 return GradCase{{rand_tensor(g, a), rand_tensor(g, b)},
                                 [axis](const Vec& v) { return concat<double>({v[0], v[1]}, axis); }};
               }});
  s.push_back({"slice", [](std::mt19937_64& g) {
                 const Index n = pick(g, 2, 6), start = pick(g, 0, n - 1), len = pick(g, 1, n - start);
                 return GradCase{{rand_tensor(g, {pick(g, 1, 3), n})},
                                 [start, len](const Vec& v) { return slice(v[0], 1, start, len); }};
               }});
  s.push_back({"matmul", [](std::mt19937_64& g) {
                 const Index m = pick(g, 1, 3), k = pick(g, 1, 4), n = pick(g, 1, 3), batch = pick(g, 1, 2);
                 const bool shared = g() % 2;
                 Shape sb = shared ? Shape{k, n} : Shape{batch, k, n};
                 return GradCase{{rand_tensor(g, {batch, m, k}), rand_tensor(g, sb)},
                                 [](const Vec& v) { return matmul(v[0], v[1]); }};
               }});
  s.push_back({"linear", [](std::mt19937_64& g) {
                 const Index din = pick(g, 1, 4), dout = pick(g, 1, 3);
                 const bool bias = g() % 2;
                 Vec in{rand_tensor(g, {pick(g, 1, 2), pick(g, 1, 3), din}), rand_tensor(g, {din, dout})};
                 if (bias) in.push_back(rand_tensor(g, {dout}));
                 return GradCase{in, [](const Vec& v) { return linear(v[0], v[1], v.size() > 2 ? v[2] : T()); }};
               }});
  s.push_back({"conv2d", [](std::mt19937_64& g) {
                 const Index c = pick(g, 1, 2), o = pick(g, 1, 3), k = pick(g, 1, 3), pad = pick(g, 0, 1);
                 const Index h = pick(g, std::max<Index>(1, k - 2 * pad), 5), w = pick(g, std::max<Index>(1, k - 2 * pad), 5);
                 const bool batched = g() % 2, bias = g() % 2;
                 Shape sx = batched ? Shape{2, c, h, w} : Shape{c, h, w};
                 Vec in{rand_tensor(g, sx), rand_tensor(g, {o, c, k, k})};
                 if (bias) in.push_back(rand_tensor(g, {o}));
                 return GradCase{in, [pad](const Vec& v) { return conv2d(v[0], v[1], v.size() > 2 ? v[2] : T(), pad); }};
               }});
  s.push_back({"relu", [](std::mt19937_64& g) {
                 return GradCase{{away_from_zero(g, {pick(g, 1, 3), pick(g, 1, 5)})}, [](const Vec& v) { return relu(v[0]); }};
               }});
  s.push_back({"maxpool2d", [](std::mt19937_64& g) {
                 return GradCase{{separated(g, {pick(g, 1, 2), pick(g, 1, 2), pick(g, 2, 5), pick(g, 2, 5)})},
                                 [](const Vec& v) { return maxpool2d(v[0]); }};
               }});
  s.push_back({"softmax", [](std::mt19937_64& g) {
                 const Index axis = pick(g, 0, 1);
                 return GradCase{{rand_tensor(g, {pick(g, 1, 3), pick(g, 1, 5)}, true, -3, 3)},
                                 [axis](const Vec& v) { return softmax(v[0], axis); }};
               }});
  s.push_back({"layer_norm", [](std::mt19937_64& g) {
                 const Index d = pick(g, 2, 6);
                 return GradCase{{rand_tensor(g, {pick(g, 1, 3), d}), rand_tensor(g, {d}), rand_tensor(g, {d})},
                                 [](const Vec& v) { return layer_norm(v[0], v[1], v[2]); }};
               }});
  s.push_back({"batch_norm2d", [](std::mt19937_64& g) {
                 const Index c = pick(g, 1, 3);
                 const Mode mode = g() % 4 == 0 ? Mode::Eval : Mode::Train;
                 T rm = rand_tensor(g, {c}, false), rv = rand_tensor(g, {c}, false, 0.5, 1.5);
                 return GradCase{{rand_tensor(g, {pick(g, 2, 3), c, pick(g, 1, 3), pick(g, 1, 3)}), rand_tensor(g, {c}),
                                  rand_tensor(g, {c})},
                                 [rm, rv, mode](const Vec& v) mutable {
                                   return batch_norm2d(v[0], v[1], v[2], rm, rv, mode);
                                 }};
               }});
  s.push_back({"dropout", [](std::mt19937_64& g) {
                 const DropoutKey key{g(), 1, 0, 0};
                 return GradCase{{rand_tensor(g, {pick(g, 1, 3), pick(g, 1, 6)})},
                                 [key](const Vec& v) { return dropout(v[0], 0.3, Mode::Train, key); }};
               }});
  s.push_back({"cross_entropy", [](std::mt19937_64& g) {
                 const Index n = pick(g, 1, 4), c = pick(g, 2, 4);
                 std::vector<int> labels(static_cast<std::size_t>(n));
                 for (auto& l : labels) l = static_cast<int>(pick(g, 0, c - 1));
                 return GradCase{{rand_tensor(g, {n, c}, true, -3, 3)}, [labels](const Vec& v) {
                                   return cross_entropy(v[0], std::span<const int>(labels));
                                 }};
               }});
  return s;
}

Tensor<double> faulty_scale(const Tensor<double>& x) {
  return Tensor<double>::from_op("faulty_scale", x.shape(), x.values() * 3.0, {x}, [](detail::Node<double>& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad) p.grad_buffer() += 6.0 * self.grad;  // should be 3
  });
}

OpSuiteEntry faulty_entry() {
  return {"faulty_scale", [](std::mt19937_64& g) {
            return GradCase{{rand_tensor(g, {pick(g, 1, 4)})}, [](const Vec& v) { return faulty_scale(v[0]); }};
          }};
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.n_mels = 8;
  a.input_frames = 16;
  a.conv_channels = {2, 3, 4};
  a.n_encoder_layers = 1;
  a.n_heads = 2;
  a.d_model = 16;
  a.d_ff = 32;
  return a;
}

double check_tiny_model(std::uint64_t seed, double step) {
  const ArchConfig arch = tiny_arch();
  ModelParams<double> params = init_params<double>(arch, seed);
  std::mt19937_64 gen(seed);
  const T x = rand_tensor(gen, {2, 1, arch.n_mels, arch.input_frames}, false);
  const std::vector<int> labels{1, 3};
  const ForwardContext ctx{Mode::Train, seed, 1, 0};
  auto loss_of = [&] { return cross_entropy(model_forward(x, params, arch, ctx), std::span<const int>(labels)); };

  params.zero_grad();
  backward(loss_of());
  double worst = 0.0;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    T p = e.tensor;
    const T::Array analytic = p.grad();
    for (Index i = 0; i < p.size(); ++i) {
      const double orig = p.values()[i];
      p.mutable_values()[i] = orig + step;
      const double up = loss_of().item();
      p.mutable_values()[i] = orig - step;
      const double down = loss_of().item();
      p.mutable_values()[i] = orig;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * step)));
    }
  }
  return worst;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  GradcheckReport report;
  auto suite = op_suite();
  if (opt.inject_fault) suite.push_back(faulty_entry());

  std::set<std::string> covered;
  for (const auto& entry : suite) {
    std::mt19937_64 gen(opt.seed ^ std::hash<std::string>{}(entry.name));
    GradcheckResult r{entry.name, 0.0, opt.trials, opt.op_tolerance};
    for (int t = 0; t < opt.trials; ++t) {
      GradCase c = entry.make(gen);
      r.max_error = std::max(r.max_error, check_case(c, gen, opt.step));
    }
    covered.insert(entry.name);
    report.results.push_back(r);
  }
  for (auto name : differentiable_ops())
    if (!covered.count(std::string(name))) report.uncovered.emplace_back(name);

  if (opt.include_model)
    report.results.push_back({"tiny_cnn_transformer", check_tiny_model(opt.seed, opt.step), 1, opt.model_tolerance});
  return report;
}

std::string format_report(const GradcheckReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %8s %12s %10s  %s\n", "op", "trials", "max_rel_err", "tolerance", "result");
  out += line;
  for (const auto& res : r.results) {
    std::snprintf(line, sizeof line, "%-22s %8d %12.3e %10.0e  %s\n", res.name.c_str(), res.trials, res.max_error,
                  res.tolerance, res.passed() ? "PASS" : "FAIL");
    out += line;
  }
  for (const auto& name : r.uncovered) out += "uncovered op: " + name + "\n";
  out += r.passed() ? "gradcheck: PASS\n" : "gradcheck: FAIL\n";
  return out;
}

}  // namespace ser
