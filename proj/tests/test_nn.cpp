#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ltrp/checkpoint.hpp"
#include "ltrp/nn.hpp"

using namespace ltrp;
using nn::Mat;

namespace {

Mat<double> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-3, std::abs(a) + std::abs(b)); }

// Checks d(sum(out * weights))/d(input) and d/d(params) against central differences.
template <class Forward, class Backward, class Module>
void check_gradients(Module& module, Mat<double> x, const Mat<double>& weights, Forward forward, Backward backward) {
  auto objective = [&](const Mat<double>& in) { return (forward(in).array() * weights.array()).sum(); };
  auto params = nn::collect_params<double>(module);
  nn::zero_grad(params);
  const Mat<double> dx = backward(x, weights);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = objective(x);
    x.data()[i] = keep - h;
    const double down = objective(x);
    x.data()[i] = keep;
    CHECK(rel_err(dx.data()[i], (up - down) / (2 * h)) < 1e-5);
  }
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); i += 7) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double up = objective(x);
      p->value.data()[i] = keep - h;
      const double down = objective(x);
      p->value.data()[i] = keep;
      INFO(p->name);
      CHECK(rel_err(p->grad.data()[i], (up - down) / (2 * h)) < 1e-5);
    }
  }
}

}  // namespace

TEST_CASE("layer norm gradients") {
  Rng rng(1);
  nn::LayerNorm<double> ln("ln", 6);
  ln.gamma.value = random_mat(1, 6, rng);
  ln.beta.value = random_mat(1, 6, rng);
  const Mat<double> x = random_mat(4, 6, rng);
  const Mat<double> w = random_mat(4, 6, rng);
  check_gradients(
      ln, x, w, [&](const Mat<double>& in) { return ln.forward(in, nullptr); },
      [&](const Mat<double>& in, const Mat<double>& dy) {
        nn::LayerNormCache<double> c;
        ln.forward(in, &c);
        return ln.backward(c, dy);
      });
}

TEST_CASE("attention gradients with and without a key mask") {
  Rng rng(2);
  nn::MultiHeadAttention<double> attn("attn", 8, 2, rng);
  const Mat<double> x = random_mat(5, 8, rng);
  const Mat<double> w = random_mat(5, 8, rng);
  for (const nn::KeyMask& mask : {nn::KeyMask{}, nn::KeyMask{1, 0, 1, 1, 0}}) {
    check_gradients(
        attn, x, w, [&](const Mat<double>& in) { return attn.forward(in, mask, nullptr); },
        [&](const Mat<double>& in, const Mat<double>& dy) {
          nn::AttentionCache<double> c;
          attn.forward(in, mask, &c);
          return attn.backward(c, dy);
        });
  }
}

TEST_CASE("transformer stack gradients") {
  Rng rng(3);
  nn::TransformerStack<double> stack("s", nn::StackShape{2, 8, 2, 2}, rng);
  const Mat<double> x = random_mat(4, 8, rng);
  const Mat<double> w = random_mat(4, 8, rng);
  check_gradients(
      stack, x, w, [&](const Mat<double>& in) { return stack.forward(in, {}, nullptr); },
      [&](const Mat<double>& in, const Mat<double>& dy) {
        nn::StackCache<double> c;
        stack.forward(in, {}, &c);
        return stack.backward(c, dy);
      });
}

TEST_CASE("masked keys receive zero attention and do not influence other rows") {
  Rng rng(4);
  nn::MultiHeadAttention<double> attn("attn", 8, 2, rng);
  Mat<double> x = random_mat(4, 8, rng);
  const nn::KeyMask mask{1, 1, 0, 1};
  std::vector<Mat<double>> weights;
  const Mat<double> y = attn.forward(x, mask, nullptr, &weights);
  for (const auto& w : weights) {
    CHECK(w.col(2).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < w.rows(); ++i) CHECK(w.row(i).sum() == doctest::Approx(1.0));
  }
  x.row(2).setConstant(5.0);
  const Mat<double> y2 = attn.forward(x, mask, nullptr);
  for (int r : {0, 1, 3}) CHECK((y.row(r) - y2.row(r)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sin-cos position embedding") {
  const Mat<float> pe = nn::sincos_position_embedding<float>(3, 4, 8);
  CHECK(pe.rows() == 12);
  CHECK(pe(0, 0) == 0.0f);
  CHECK(pe(0, 2) == 1.0f);
  CHECK(pe(5, 0) == doctest::Approx(std::sin(1.0)));  // row 1
  CHECK(pe(5, 4) == doctest::Approx(std::sin(1.0)));  // col 1
  CHECK_THROWS_AS(nn::sincos_position_embedding<float>(2, 2, 6), InvalidInput);
}

TEST_CASE("adam minimizes a quadratic") {
  nn::Param<float> p("p", 1, 3);
  p.value << 3.0f, -2.0f, 1.0f;
  nn::AdamW<float> opt({&p}, nn::AdamOptions{0.05, 0.9, 0.999, 1e-8, 0.0, 0.0});
  for (int i = 0; i < 500; ++i) {
    p.grad = 2.0f * p.value;
    opt.step(0.05);
  }
  CHECK(p.value.cwiseAbs().maxCoeff() < 0.05f);
}

TEST_CASE("flops of a stack follow 12nd^2 + 2n^2d per block") {
  const auto f = nn::stack_flops(nn::StackShape{2, 10, 2, 4}, 3);
  CHECK(f.projections + f.mlp == doctest::Approx(2 * 12.0 * 3 * 100));
  CHECK(f.attention == doctest::Approx(2 * 2.0 * 9 * 10));
}

TEST_CASE("checkpoint round trip and config check") {
  Rng rng(5);
  nn::TransformerStack<float> a("s", nn::StackShape{1, 8, 2, 2}, rng);
  nn::TransformerStack<float> b("s", nn::StackShape{1, 8, 2, 2}, rng);
  const auto path = std::filesystem::temp_directory_path() / "ltrp_test_ckpt.bin";
  Checkpoint ck{{{"kind", "test"}, {"width", 8}}, export_params(a)};
  save_checkpoint(path, ck);
  const Checkpoint loaded = load_checkpoint(path, nlohmann::json{{"kind", "test"}, {"width", 8}});
  import_params(b, loaded.arrays);
  CHECK(b.blocks[0].fc1.weight.value == a.blocks[0].fc1.weight.value);
  CHECK_THROWS_AS(load_checkpoint(path, nlohmann::json{{"kind", "test"}, {"width", 16}}), InvalidInput);
  nn::TransformerStack<float> wrong("s", nn::StackShape{1, 12, 2, 2}, rng);
  CHECK_THROWS_AS(import_params(wrong, loaded.arrays), InvalidInput);
  std::filesystem::remove(path);
}
