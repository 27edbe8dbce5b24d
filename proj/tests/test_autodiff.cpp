#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "packetclip/autodiff.hpp"
#include "packetclip/rng.hpp"

using namespace packetclip;
using namespace packetclip::ad;
namespace ts = testsupport;

namespace {

// builds a graph from leaf values, reduces to sum_all, checks every leaf
// gradient against central differences
void check_gradients(std::vector<Mat> leaves,
                     const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
                     double tol = 1e-7) {
  auto loss_of = [&]() {
    Tape tape;
    std::vector<NodeId> ids;
    for (const auto& m : leaves) ids.push_back(tape.leaf(m, false));
    NodeId out = build(tape, ids);
    NodeId loss = tape.sum_all(out);
    return tape.val(loss).at(0, 0);
  };

  Tape tape;
  std::vector<NodeId> ids;
  for (const auto& m : leaves) ids.push_back(tape.leaf(m, true));
  NodeId out = build(tape, ids);
  NodeId loss = tape.sum_all(out);
  tape.backward(loss);

  for (size_t li = 0; li < leaves.size(); ++li) {
    const Mat& grad = tape.grad(ids[li]);
    REQUIRE(!grad.empty());
    for (int r = 0; r < leaves[li].rows(); ++r) {
      for (int c = 0; c < leaves[li].cols(); ++c) {
        double fd = ts::central_diff(leaves[li], r, c, 1e-6, loss_of);
        double an = grad.at(r, c);
        INFO("leaf ", li, " (", r, ",", c, ") analytic=", an, " fd=", fd);
        CHECK(std::abs(an - fd) <= tol * (1.0 + std::abs(an)));
      }
    }
  }
}

}  // namespace

TEST_CASE("linear forward matches explicit affine") {
  Rng rng(1);
  Mat x = Mat::random_normal(3, 4, 1.0, rng);
  Mat w = Mat::random_normal(2, 4, 1.0, rng);
  Mat b = Mat::random_normal(1, 2, 1.0, rng);
  Tape tape;
  NodeId y = tape.linear(tape.leaf(x), tape.leaf(w), tape.leaf(b));
  for (int r = 0; r < 3; ++r)
    for (int o = 0; o < 2; ++o) {
      double want = b.at(0, o);
      for (int c = 0; c < 4; ++c) want += x.at(r, c) * w.at(o, c);
      CHECK(tape.val(y).at(r, o) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("gradients: linear") {
  Rng rng(2);
  check_gradients({Mat::random_normal(3, 4, 1.0, rng), Mat::random_normal(2, 4, 1.0, rng),
                   Mat::random_normal(1, 2, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.linear(ids[0], ids[1], ids[2]);
                  });
}

TEST_CASE("gradients: add, sub, mul, scale chain") {
  Rng rng(3);
  check_gradients(
      {Mat::random_normal(2, 3, 1.0, rng), Mat::random_normal(2, 3, 1.0, rng),
       Mat::random_normal(2, 3, 1.0, rng)},
      [](Tape& t, const std::vector<NodeId>& ids) {
        return t.scale(t.mul(t.add(ids[0], ids[1]), t.sub(ids[0], ids[2])), 0.7);
      });
}

TEST_CASE("gradients: tanh and gelu") {
  Rng rng(4);
  check_gradients({Mat::random_normal(2, 5, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) { return t.tanh_(ids[0]); });
  check_gradients({Mat::random_normal(2, 5, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) { return t.gelu(ids[0]); });
}

TEST_CASE("gradients: sum_list with repeated inputs") {
  Rng rng(5);
  check_gradients({Mat::random_normal(2, 3, 1.0, rng), Mat::random_normal(2, 3, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.sum_list({ids[0], ids[1], ids[0]});
                  });
}

TEST_CASE("gradients: layer_norm") {
  Rng rng(6);
  check_gradients({Mat::random_normal(3, 6, 1.0, rng),
                   Mat::random_uniform(1, 6, 0.5, 1.5, rng),
                   Mat::random_normal(1, 6, 0.3, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.layer_norm(ids[0], ids[1], ids[2]);
                  },
                  1e-6);
}

TEST_CASE("gradients: window attention") {
  Rng rng(7);
  const int windows = 2, win_len = 3, heads = 2, dk = 2;
  const int rows = windows * win_len, cols = heads * dk;
  check_gradients({Mat::random_normal(rows, cols, 0.8, rng),
                   Mat::random_normal(rows, cols, 0.8, rng),
                   Mat::random_normal(rows, cols, 0.8, rng)},
                  [=](Tape& t, const std::vector<NodeId>& ids) {
                    return t.window_attention(ids[0], ids[1], ids[2], windows, win_len, heads);
                  },
                  1e-6);
}

TEST_CASE("attention: windows do not leak into each other") {
  Rng rng(8);
  const int win_len = 3, heads = 1;
  Mat q = Mat::random_normal(2 * win_len, 4, 1.0, rng);
  Mat k = Mat::random_normal(2 * win_len, 4, 1.0, rng);
  Mat v = Mat::random_normal(2 * win_len, 4, 1.0, rng);
  Tape t1;
  NodeId out1 = t1.window_attention(t1.leaf(q), t1.leaf(k), t1.leaf(v), 2, win_len, heads);
  // perturb only window 2 and confirm window 1 rows are unchanged
  Mat q2 = q;
  for (int r = win_len; r < 2 * win_len; ++r) q2.at(r, 0) += 1.0;
  Tape t2;
  NodeId out2 = t2.window_attention(t2.leaf(q2), t2.leaf(k), t2.leaf(v), 2, win_len, heads);
  for (int r = 0; r < win_len; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(t1.val(out1).at(r, c) == t2.val(out2).at(r, c));
}

TEST_CASE("gradients: add_position") {
  Rng rng(9);
  check_gradients({Mat::random_normal(6, 4, 1.0, rng), Mat::random_normal(3, 4, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.add_position(ids[0], ids[1], 3);
                  });
}

TEST_CASE("gradients: gather_rows with duplicate indices") {
  Rng rng(10);
  check_gradients({Mat::random_normal(4, 3, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.gather_rows(ids[0], {2, 0, 2, 3, 2});
                  });
}

TEST_CASE("gradients: group_mean_rows and broadcast_row") {
  Rng rng(11);
  check_gradients({Mat::random_normal(6, 3, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.group_mean_rows(ids[0], 3);
                  });
  check_gradients({Mat::random_normal(1, 5, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.mul(t.broadcast_row(ids[0], 4),
                                 t.broadcast_row(ids[0], 4));
                  });
}

TEST_CASE("gradients: concat_cols") {
  Rng rng(12);
  check_gradients({Mat::random_normal(3, 2, 1.0, rng), Mat::random_normal(3, 4, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    return t.concat_cols({ids[0], ids[1]});
                  });
}

TEST_CASE("gradients: softmax + nll composition") {
  Rng rng(13);
  std::vector<int> labels = {2, 0, 1};
  check_gradients({Mat::random_normal(3, 4, 1.0, rng)},
                  [&](Tape& t, const std::vector<NodeId>& ids) {
                    return t.nll_mean(t.softmax_rows(ids[0]), labels);
                  },
                  1e-6);
}

TEST_CASE("gradients: smoothing-style squared difference of softmax rows") {
  Rng rng(14);
  check_gradients({Mat::random_normal(4, 3, 1.0, rng)},
                  [](Tape& t, const std::vector<NodeId>& ids) {
                    NodeId p = t.softmax_rows(ids[0]);
                    NodeId d = t.sub(t.gather_rows(p, {1, 2, 3}), t.gather_rows(p, {0, 1, 2}));
                    return t.scale(t.mul(d, d), 0.5);
                  },
                  1e-6);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(15);
  Mat x = Mat::random_normal(5, 7, 2.0, rng);
  Tape t;
  NodeId p = t.softmax_rows(t.leaf(x));
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += t.val(p).at(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Mat shifted = x;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) shifted.at(r, c) += 13.5;
  Tape t2;
  NodeId p2 = t2.softmax_rows(t2.leaf(shifted));
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c)
      CHECK(t.val(p).at(r, c) == doctest::Approx(t2.val(p2).at(r, c)).epsilon(1e-9));
}

TEST_CASE("adam: lr=0 is a no-op; known single step") {
  Mat p = Mat::row_vec({1.0, -2.0});
  Mat g = Mat::row_vec({0.5, 0.25});
  Adam adam;
  adam.lr = 0.0;
  adam.init({&p});
  adam.step({&p}, {&g});
  CHECK(p.at(0, 0) == 1.0);
  CHECK(p.at(0, 1) == -2.0);

  // first step with bias correction moves by ~lr * sign(g)
  Adam adam2;
  adam2.lr = 0.1;
  adam2.epsilon = 1e-12;
  adam2.init({&p});
  adam2.step({&p}, {&g});
  CHECK(p.at(0, 0) == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
  CHECK(p.at(0, 1) == doctest::Approx(-2.0 - 0.1).epsilon(1e-6));
}
