#include "neurotopo/gradcheck.hpp"

#include "neurotopo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace neurotopo {

namespace {

using TD = Tensor<double>;
using Build = std::function<Var<double>(const std::vector<Var<double>>&)>;

double check(const std::vector<TD>& inputs, const Build& build, std::mt19937_64& rng) {
  auto run = [&](const std::vector<TD>& vals, std::vector<Var<double>>* leaves) {
    std::vector<Var<double>> vars;
    for (const auto& v : vals) vars.push_back(parameter(v));
    if (leaves) *leaves = vars;
    return build(vars);
  };
  std::vector<Var<double>> leaves;
  const auto out = run(inputs, &leaves);
  const auto proj = TD::uniform(out->value.shape(), -1.0, 1.0, rng);
  backward(sum(mul(out, constant(proj))));
  auto objective = [&](const std::vector<TD>& vals) {
    const auto o = run(vals, nullptr);
    double s = 0;
    for (std::size_t i = 0; i < o->value.size(); ++i) s += o->value[i] * proj[i];
    return s;
  };

  const double h = 1e-5;
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto up = inputs, down = inputs;
      up[k][i] += h;
      down[k][i] -= h;
      const double numeric = (objective(up) - objective(down)) / (2 * h);
      const double analytic = leaves[k]->grad.size() ? leaves[k]->grad[i] : 0.0;
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

TD rnd(Shape s, std::mt19937_64& rng) { return TD::uniform(std::move(s), -1.0, 1.0, rng); }

// Uniform values at least `gap` away from zero.
TD off_zero(Shape s, double gap, std::mt19937_64& rng) {
  TD t = rnd(std::move(s), rng);
  for (auto& v : t.values()) v = v < 0 ? v - gap : v + gap;
  return t;
}

// Shuffled, well separated values so max-pool windows never tie.
TD separated(Shape s, std::mt19937_64& rng) {
  TD t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.05 * static_cast<double>(i);
  std::shuffle(t.values().begin(), t.values().end(), rng);
  return t;
}

struct OpCase {
  const char* name;
  std::function<double(std::mt19937_64&)> run;
};

std::vector<OpCase> cases() {
  return {
      {"relu", [](auto& r) { return check({off_zero({2, draw(r, 1, 8)}, 0.05, r)}, [](auto& v) { return relu(v[0]); }, r); }},
      {"sigmoid", [](auto& r) { return check({rnd({2, draw(r, 1, 8)}, r)}, [](auto& v) { return sigmoid(v[0]); }, r); }},
      {"softmax", [](auto& r) { return check({rnd({draw(r, 1, 3), draw(r, 2, 5)}, r)}, [](auto& v) { return softmax(v[0]); }, r); }},
      {"conv2d",
       [](auto& r) {
         const std::size_t c = draw(r, 1, 2), f = draw(r, 1, 2);
         return check({rnd({draw(r, 1, 2), c, draw(r, 1, 6), draw(r, 1, 6)}, r), rnd({f, c, 5, 5}, r), rnd({f}, r)},
                      [](auto& v) { return conv2d(v[0], v[1], v[2]); }, r);
       }},
      {"conv2d/stride2",
       [](auto& r) {
         const std::size_t c = draw(r, 1, 2), f = draw(r, 1, 2);
         return check({rnd({1, c, 2 * draw(r, 1, 3), 2 * draw(r, 1, 3)}, r), rnd({f, c, 4, 4}, r), rnd({f}, r)},
                      [](auto& v) { return conv2d(v[0], v[1], v[2], {2, 1}); }, r);
       }},
      {"upconv2d",
       [](auto& r) {
         const std::size_t c = draw(r, 1, 2), f = draw(r, 1, 2);
         return check({rnd({1, c, draw(r, 1, 3), draw(r, 1, 3)}, r), rnd({c, f, 4, 4}, r), rnd({f}, r)},
                      [](auto& v) { return upconv2d(v[0], v[1], v[2]); }, r);
       }},
      {"maxpool2",
       [](auto& r) {
         return check({separated({1, draw(r, 1, 2), draw(r, 2, 6), draw(r, 2, 6)}, r)}, [](auto& v) { return maxpool2(v[0]); }, r);
       }},
      {"dense",
       [](auto& r) {
         const std::size_t i = draw(r, 1, 6), o = draw(r, 1, 6);
         return check({rnd({draw(r, 1, 3), i}, r), rnd({i, o}, r), rnd({o}, r)}, [](auto& v) { return dense(v[0], v[1], v[2]); }, r);
       }},
      {"flatten", [](auto& r) { return check({rnd({2, 2, draw(r, 1, 4), 3}, r)}, [](auto& v) { return flatten(v[0]); }, r); }},
      {"add",
       [](auto& r) {
         const Shape s{2, draw(r, 1, 6)};
         return check({rnd(s, r), rnd(s, r)}, [](auto& v) { return add(v[0], v[1]); }, r);
       }},
      {"sub",
       [](auto& r) {
         const Shape s{2, draw(r, 1, 6)};
         return check({rnd(s, r), rnd(s, r)}, [](auto& v) { return sub(v[0], v[1]); }, r);
       }},
      {"mul",
       [](auto& r) {
         const Shape s{2, draw(r, 1, 6)};
         return check({rnd(s, r), rnd(s, r)}, [](auto& v) { return mul(v[0], v[1]); }, r);
       }},
      {"scale", [](auto& r) { return check({rnd({3, draw(r, 1, 6)}, r)}, [](auto& v) { return scale(v[0], 0.37); }, r); }},
      {"sum", [](auto& r) { return check({rnd({3, draw(r, 1, 6)}, r)}, [](auto& v) { return sum(v[0]); }, r); }},
      {"cross_entropy",
       [](auto& r) {
         const std::size_t n = draw(r, 1, 4), k = draw(r, 2, 4);
         std::vector<int> labels(n);
         for (auto& l : labels) l = static_cast<int>(draw(r, 0, k - 1));
         return check({TD::uniform({n, k}, 0.2, 1.0, r)}, [labels](auto& v) { return cross_entropy(v[0], labels); }, r);
       }},
      {"l1_loss",
       [](auto& r) {
         const Shape s{2, draw(r, 1, 6)};
         auto a = rnd(s, r);
         auto b = off_zero(s, 0.05, r);
         for (std::size_t i = 0; i < a.size(); ++i) b[i] += a[i];
         return check({a, b}, [](auto& v) { return l1_loss(v[0], v[1]); }, r);
       }},
  };
}

} // namespace

std::vector<GradcheckRow> run_gradcheck(int seeds, std::uint64_t base_seed) {
  std::vector<GradcheckRow> rows;
  for (const auto& c : cases()) {
    GradcheckRow row{c.name, seeds, 0.0};
    for (int s = 0; s < seeds; ++s) {
      std::mt19937_64 rng(base_seed + static_cast<std::uint64_t>(s));
      row.max_rel_error = std::max(row.max_rel_error, c.run(rng));
    }
    rows.push_back(row);
  }
  return rows;
}

} // namespace neurotopo
