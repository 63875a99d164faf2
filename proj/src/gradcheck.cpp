// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hazelayer/error.hpp"
#include "hazelayer/haze.hpp"
#include "hazelayer/networks.hpp"
#include "hazelayer/objective.hpp"

namespace hazelayer::gradcheck {

using ag::DArray;
using ag::Graph;
using ag::Shape;
using Leaves = std::vector<DArray<double>>;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + kDenominatorFloor);
}

ProbeResult max_relative_error(const Leaves& leaves, const ScalarFn& fn, int probes, std::mt19937_64& rng,
                               double step) {
  const ObjectiveFn whole = [&fn](Graph<double>& g, const Leaves& l) { return Objective{fn(g, l), {}}; };
  return max_relative_error(leaves, whole, probes, rng, step);
}

ProbeResult max_relative_error(const Leaves& leaves, const ObjectiveFn& fn, int probes, std::mt19937_64& rng,
                               double step) {
  struct Evaluation {
    std::vector<double> values;  // the root alone, or each addend
    std::uint64_t signature;
  };
  auto evaluate = [&]() {
    Graph<double> graph;
    graph.track_branches(true);
    const auto objective = fn(graph, leaves);
    Evaluation e{{}, graph.branch_signature()};
    if (objective.addends.empty()) {
      e.values.push_back(objective.root.item());
    } else {
      double total = 0.0;
      for (const auto& a : objective.addends) {
        e.values.push_back(a.item());
        total += e.values.back();
      }
      const double root = objective.root.item();
      if (std::abs(total - root) > 1e-9 * std::max(1.0, std::abs(root))) {
        throw NumericError("gradcheck: addends do not sum to the objective");
      }
    }
    return e;
  };

  std::vector<std::vector<double>> analytic;
  std::uint64_t base_signature = 0;
  {
    Leaves mutable_leaves = leaves;
    for (auto& leaf : mutable_leaves) leaf.zero_grad();
    Graph<double> graph;
    graph.track_branches(true);
    const auto root = fn(graph, leaves).root;
    base_signature = graph.branch_signature();
    graph.backward(root);
    for (const auto& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    for (auto& leaf : mutable_leaves) leaf.zero_grad();
  }

  std::size_t total = 0;
  for (const auto& leaf : leaves) total += leaf.size();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  ProbeResult result;
  Leaves mutable_leaves = leaves;
  const int max_attempts = 20 * probes;
  for (int attempt = 0; attempt < max_attempts && result.accepted < probes; ++attempt) {
    std::size_t flat = pick(rng);
    std::size_t which = 0;
    while (flat >= mutable_leaves[which].size()) flat -= mutable_leaves[which++].size();
    auto data = mutable_leaves[which].mutable_data();
    const double original = data[flat];
    auto at = [&](double offset) {
      data[flat] = original + offset;
      const auto e = evaluate();
      data[flat] = original;
      return e;
    };
    const auto up = at(step);
    const auto down = at(-step);
    const bool smooth = up.signature == base_signature && down.signature == base_signature &&
                        at(kKinkRadius).signature == base_signature &&
                        at(-kKinkRadius).signature == base_signature;
    if (!smooth) {
      ++result.excluded;
      continue;
    }
    double difference = 0.0;
    for (std::size_t k = 0; k < up.values.size(); ++k) difference += up.values[k] - down.values[k];
    const double numeric = difference / (2.0 * step);
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[which][flat], numeric));
    ++result.accepted;
  }
  return result;
}

namespace {

class Inputs {
 public:
  explicit Inputs(std::mt19937_64& rng) : rng_(rng) {}

  DArray<double> uniform(Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(ag::element_count(shape));
    for (auto& x : v) x = dist(rng_);
    return DArray<double>::leaf(std::move(shape), std::move(v), true);
  }

  /// Uniform in [-1,1] but at least 1e-3 away from the kink at zero.
  DArray<double> away_from_zero(Shape shape) {
    std::uniform_real_distribution<double> mag(1e-3, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(ag::element_count(shape));
    for (auto& x : v) x = sign(rng_) ? mag(rng_) : -mag(rng_);
    return DArray<double>::leaf(std::move(shape), std::move(v), true);
  }

  /// Distinct values on a jittered grid so no max/min is within 1e-3 of a tie.
  DArray<double> distinct(Shape shape) {
    const std::size_t n = ag::element_count(shape);
    std::vector<std::size_t> rank(n);
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    std::shuffle(rank.begin(), rank.end(), rng_);
    std::uniform_real_distribution<double> jitter(0.25, 0.75);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = (static_cast<double>(rank[i]) + jitter(rng_)) / static_cast<double>(n);
    return DArray<double>::leaf(std::move(shape), std::move(v), true);
  }

  double phase() { return std::uniform_real_distribution<double>(0.0, 6.283)(rng_); }
  std::uint64_t seed() { return rng_(); }

  std::vector<double> weights(const Shape& shape) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(ag::element_count(shape));
    for (auto& x : v) x = dist(rng_);
    return v;
  }

 private:
  std::mt19937_64& rng_;
};

/// sum(out * W) where W is a fixed pseudo-random pattern, so every output
/// element carries a distinct weight.
DArray<double> weighted_sum(Graph<double>& g, const DArray<double>& out, double phase) {
  std::vector<double> w(out.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(phase + 1.91 * static_cast<double>(i));
  return g.sum(g.mul(out, g.constant(out.shape(), std::move(w))));
}

struct Case {
  std::string name;
  // Returns the leaves and the scalar function for one random instance.
  std::function<std::pair<Leaves, ObjectiveFn>(Inputs&)> make;
};

ObjectiveFn whole(ScalarFn fn) {
  return [fn = std::move(fn)](Graph<double>& g, const Leaves& l) { return Objective{fn(g, l), {}}; };
}

template <typename Op>
Case unary_case(std::string name, Shape shape, Op op, int domain) {
  return {name, [shape, op, domain](Inputs& in) {
            DArray<double> x;
            switch (domain) {
              case 0: x = in.uniform(shape, -2.0, 2.0); break;
              case 1: x = in.uniform(shape, 0.5, 2.0); break;
              case 2: x = in.away_from_zero(shape); break;
              default: x = in.distinct(shape); break;
            }
            const double w = in.phase();
            ScalarFn fn = [op, w](Graph<double>& g, const Leaves& l) { return weighted_sum(g, op(g, l[0]), w); };
            return std::pair{Leaves{x}, whole(fn)};
          }};
}

template <typename Op>
Case binary_case(std::string name, Shape a_shape, Shape b_shape, Op op, bool positive_b) {
  return {name, [a_shape, b_shape, op, positive_b](Inputs& in) {
            auto a = in.uniform(a_shape, -2.0, 2.0);
            auto b = positive_b ? in.uniform(b_shape, 0.5, 2.0) : in.uniform(b_shape, -2.0, 2.0);
            const double w = in.phase();
            ScalarFn fn = [op, w](Graph<double>& g, const Leaves& l) { return weighted_sum(g, op(g, l[0], l[1]), w); };
            return std::pair{Leaves{a, b}, whole(fn)};
          }};
}

std::vector<Case> primitive_cases() {
  std::vector<Case> cases;
  cases.push_back({"conv2d", [](Inputs& in) {
                     Leaves l{in.uniform({1, 2, 5, 5}, -1, 1), in.uniform({4, 2, 3, 3}, -1, 1),
                              in.uniform({4}, -1, 1)};
                     const double w = in.phase();
                     ScalarFn fn = [w](Graph<double>& g, const Leaves& x) {
                       return weighted_sum(g, g.conv2d(x[0], x[1], x[2], 1, ag::Padding::same(3)), w);
                     };
                     return std::pair{l, whole(fn)};
                   }});
  cases.push_back({"conv2d_stride2", [](Inputs& in) {
                     Leaves l{in.uniform({1, 2, 6, 6}, -1, 1), in.uniform({3, 2, 3, 3}, -1, 1),
                              in.uniform({3}, -1, 1)};
                     const double w = in.phase();
                     ScalarFn fn = [w](Graph<double>& g, const Leaves& x) {
                       return weighted_sum(g, g.conv2d(x[0], x[1], x[2], 2, ag::Padding{1}), w);
                     };
                     return std::pair{l, whole(fn)};
                   }});
  cases.push_back({"batch_norm", [](Inputs& in) {
                     Leaves l{in.uniform({1, 3, 4, 4}, -1, 1), in.uniform({3}, 0.5, 1.5), in.uniform({3}, -1, 1)};
                     const double w = in.phase();
                     ScalarFn fn = [w](Graph<double>& g, const Leaves& x) {
                       return weighted_sum(g, g.batch_norm(x[0], x[1], x[2]), w);
                     };
                     return std::pair{l, whole(fn)};
                   }});
  cases.push_back(unary_case("leaky_relu", {2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.leaky_relu(x, 0.2);
  }, 2));
  cases.push_back(unary_case("relu", {2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) { return g.relu(x); }, 2));
  cases.push_back(unary_case("sigmoid", {2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.sigmoid(x);
  }, 0));
  cases.push_back(unary_case("max_pool2", {1, 2, 4, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.max_pool2(x);
  }, 3));
  cases.push_back(unary_case("upsample_nearest2", {1, 2, 3, 3}, [](Graph<double>& g, const DArray<double>& x) {
    return g.upsample_nearest2(x);
  }, 0));
  cases.push_back(unary_case("reshape", {1, 2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.reshape(x, {4, 6});
  }, 0));
  cases.push_back(binary_case("add", {1, 3, 4, 4}, {1, 1, 4, 4}, [](Graph<double>& g, const DArray<double>& a,
                                                                    const DArray<double>& b) { return g.add(a, b); }, false));
  cases.push_back(binary_case("sub", {1, 3, 4, 4}, {1, 3, 1, 1}, [](Graph<double>& g, const DArray<double>& a,
                                                                    const DArray<double>& b) { return g.sub(a, b); }, false));
  cases.push_back(binary_case("mul", {1, 3, 4, 4}, {1, 1, 4, 4}, [](Graph<double>& g, const DArray<double>& a,
                                                                    const DArray<double>& b) { return g.mul(a, b); }, false));
  cases.push_back(binary_case("div", {1, 3, 4, 4}, {1, 3, 4, 4}, [](Graph<double>& g, const DArray<double>& a,
                                                                    const DArray<double>& b) { return g.div(a, b); }, true));
  cases.push_back(unary_case("scale_add_scalar", {3, 5}, [](Graph<double>& g, const DArray<double>& x) {
    return g.add_scalar(g.scale(x, -1.7), 0.3);
  }, 0));
  cases.push_back(unary_case("exp", {3, 5}, [](Graph<double>& g, const DArray<double>& x) { return g.exp(x); }, 0));
  cases.push_back(unary_case("log", {3, 5}, [](Graph<double>& g, const DArray<double>& x) { return g.log(x); }, 1));
  cases.push_back(unary_case("square", {3, 5}, [](Graph<double>& g, const DArray<double>& x) { return g.square(x); }, 0));
  cases.push_back(unary_case("sqrt", {3, 5}, [](Graph<double>& g, const DArray<double>& x) { return g.sqrt(x); }, 1));
  cases.push_back(unary_case("sum", {2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.scale(g.sum(g.square(x)), 1.0);
  }, 0));
  cases.push_back(unary_case("mean", {2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.mean(g.square(x));
  }, 0));
  cases.push_back(unary_case("sum_axis", {2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.sum(x, 1);
  }, 0));
  cases.push_back(unary_case("mean_axis", {2, 3, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return g.mean(x, 2);
  }, 0));
  cases.push_back(unary_case("max3", {1, 3, 4, 4}, [](Graph<double>& g, const DArray<double>& x) { return g.max3(x); }, 3));
  cases.push_back(unary_case("min3", {1, 3, 4, 4}, [](Graph<double>& g, const DArray<double>& x) { return g.min3(x); }, 3));
  cases.push_back({"chain_conv_bn_leaky_sigmoid", [](Inputs& in) {
                     // The conv has no bias: batch_norm would cancel it, as in the networks.
                     Leaves l{in.uniform({1, 2, 5, 5}, -1, 1), in.uniform({3, 2, 3, 3}, -1, 1),
                              in.uniform({3}, 0.5, 1.5), in.uniform({3}, -0.5, 0.5)};
                     const double w = in.phase();
                     ScalarFn fn = [w](Graph<double>& g, const Leaves& x) {
                       const auto h = g.batch_norm(g.conv2d(x[0], x[1], DArray<double>{}, 1, ag::Padding::same(3)),
                                                   x[2], x[3]);
                       return weighted_sum(g, g.sigmoid(g.leaky_relu(h, 0.2)), w);
                     };
                     return std::pair{l, whole(fn)};
                   }});
  return cases;
}

std::vector<Case> physics_and_loss_cases() {
  using objective::LossConfig;
  std::vector<Case> cases;
  cases.push_back({"compose", [](Inputs& in) {
                     Leaves l{in.uniform({1, 3, 4, 4}, 0, 1), in.uniform({1, 1, 4, 4}, 0, 1), in.uniform({1, 3, 4, 4}, 0, 1)};
                     const double w = in.phase();
                     ScalarFn fn = [w](Graph<double>& g, const Leaves& x) {
                       return weighted_sum(g, haze::compose(g, x[0], x[1], x[2]), w);
                     };
                     return std::pair{l, whole(fn)};
                   }});
  cases.push_back(unary_case("hsv_value", {1, 3, 4, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return haze::hsv_value(g, x);
  }, 3));
  cases.push_back(unary_case("hsv_saturation", {1, 3, 4, 4}, [](Graph<double>& g, const DArray<double>& x) {
    return haze::hsv_saturation(g, x);
  }, 3));
  cases.push_back({"loss_rec", [](Inputs& in) {
                     Leaves l{in.uniform({1, 3, 5, 5}, 0, 1)};
                     const auto target = in.weights({1, 3, 5, 5});
                     ScalarFn fn = [target](Graph<double>& g, const Leaves& x) {
                       return objective::loss_rec(g, x[0], g.constant({1, 3, 5, 5}, target), LossConfig{});
                     };
                     return std::pair{l, whole(fn)};
                   }});
  cases.push_back(unary_case("loss_j", {1, 3, 5, 5}, [](Graph<double>& g, const DArray<double>& x) {
    return objective::loss_j(g, x, LossConfig{});
  }, 3));
  cases.push_back({"loss_hint", [](Inputs& in) {
                     Leaves l{in.uniform({1, 3, 5, 5}, 0, 1)};
                     const ImagePlane hint = ImagePlane::filled(1, 1, {0.7, 0.8, 0.9});
                     ScalarFn fn = [hint](Graph<double>& g, const Leaves& x) {
                       return objective::loss_hint(g, x[0], hint, LossConfig{});
                     };
                     return std::pair{l, whole(fn)};
                   }});
  cases.push_back({"loss_kl", [](Inputs& in) {
                     Leaves l{in.uniform({1, 4, 2, 2}, -1, 1), in.uniform({1, 4, 2, 2}, -1, 1)};
                     ScalarFn fn = [](Graph<double>& g, const Leaves& x) {
                       return objective::loss_kl(g, nets::LatentGaussian<double>{x[0], x[1]});
                     };
                     return std::pair{l, whole(fn)};
                   }});
  cases.push_back({"loss_reg", [](Inputs& in) {
                     Leaves l{in.uniform({1, 3, 5, 4}, 0, 1)};
                     ScalarFn fn = [](Graph<double>& g, const Leaves& x) { return objective::loss_reg(g, x[0]); };
                     return std::pair{l, whole(fn)};
                   }});
  return cases;
}

/// All three networks on a 16x16 image through the full objective.
Case end_to_end_case() {
  return {"loss_total_end_to_end", [](Inputs& in) {
            const std::uint64_t seed = in.seed();
            auto jnet = std::make_shared<nets::NetworkParams<double>>(nets::build_jnet<double>(seed));
            auto tnet = std::make_shared<nets::NetworkParams<double>>(nets::build_tnet<double>(seed + 1));
            auto anet = std::make_shared<nets::NetworkParams<double>>(nets::build_anet<double>(seed + 2));
            Leaves leaves;
            for (const auto* net : {jnet.get(), tnet.get(), anet.get()}) {
              for (const auto& p : net->params()) leaves.push_back(p.array);
            }
            const auto image = in.uniform({1, 3, 16, 16}, 0.05, 0.95);
            const std::vector<double> pixels(image.data().begin(), image.data().end());
            ObjectiveFn fn = [jnet, tnet, anet, pixels, seed](Graph<double>& g, const Leaves&) {
              const auto x = g.constant({1, 3, 16, 16}, pixels);
              nets::SeededRng sampling(seed + 3);
              objective::ForwardPass<double> pass;
              pass.hazy = x;
              pass.radiance = nets::forward_jnet(g, *jnet, x);
              pass.transmission = nets::forward_tnet(g, *tnet, x);
              auto a = nets::forward_anet(g, *anet, x, sampling);
              pass.airlight = a.image;
              pass.latent = a.latent;
              pass.reconstructed = haze::compose(g, pass.radiance, pass.transmission, pass.airlight);
              const objective::LossConfig cfg;
              const ImagePlane hint = ImagePlane::filled(1, 1, {0.8, 0.8, 0.8});
              objective::LossTerms<double> terms;
              terms.rec = objective::loss_rec(g, pass.reconstructed, pass.hazy, cfg);
              terms.j = objective::loss_j(g, pass.radiance, cfg);
              terms.h = objective::loss_hint(g, pass.airlight, hint, cfg);
              terms.kl = objective::loss_kl(g, pass.latent);
              terms.reg = objective::loss_reg(g, pass.airlight);
              const auto total = objective::loss_total(g, terms, cfg).total;
              return Objective{total,
                               {*terms.rec, *terms.j, *terms.h, *terms.kl, g.scale(*terms.reg, cfg.lambda_reg)}};
            };
            return std::pair{leaves, fn};
          }};
}

OpReport run_case(const Case& c, int probes, std::mt19937_64& rng, int instances) {
  Inputs in(rng);
  OpReport report{c.name, 0, 0, 0.0};
  const int per_instance = std::max(1, probes / instances);
  for (int i = 0; i < instances && report.probes < probes; ++i) {
    auto [leaves, fn] = c.make(in);
    const int n = std::min(per_instance, probes - report.probes);
    const auto r = max_relative_error(leaves, fn, n, rng);
    report.max_rel_error = std::max(report.max_rel_error, r.max_rel_error);
    report.probes += r.accepted;
    report.excluded += r.excluded;
  }
  return report;
}

}  // namespace

std::vector<OpReport> run_suite(std::uint64_t seed, int probes) {
  std::mt19937_64 rng(seed);
  std::vector<OpReport> reports;
  for (const auto& c : primitive_cases()) reports.push_back(run_case(c, probes, rng, 10));
  for (const auto& c : physics_and_loss_cases()) reports.push_back(run_case(c, probes, rng, 10));
  reports.push_back(run_case(end_to_end_case(), probes, rng, 2));
  return reports;
}

}  // namespace hazelayer::gradcheck
