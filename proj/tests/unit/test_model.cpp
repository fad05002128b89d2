#include <doctest.h>

#include "simclr/model/model.hpp"

#include <cmath>
#include <random>

using namespace simclr;
using namespace simclr::model;
using T = tg::Tensor<double>;

namespace {

augment::ImageBatch random_batch(Index n, Index h, Index w, unsigned seed) {
  augment::ImageBatch b(n, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Index i = 0; i < b.values.size(); ++i) b.values[i] = u(rng);
  return b;
}

EncoderConfig tiny() {
  EncoderConfig c;
  c.widths = {4, 6};
  c.blocks = {1, 1};
  return c;
}

Index conv_params(const ParameterList<double>& ps) {
  Index n = 0;
  for (const auto& p : ps)
    if (p.kind == ParamKind::weight) n += p.tensor.numel();
  return n;
}

}  // namespace

TEST_CASE("cifar stem is a 3x3 stride-1 conv without max pool") {
  std::mt19937_64 rng(1);
  Encoder<double> enc(EncoderConfig{}, rng);
  const auto& stem = enc.parameters().front();
  CHECK(stem.name == "stem.weight");
  CHECK(stem.tensor.shape() == tg::Shape{16, 3, 3, 3});
  CHECK(enc.representation_dim() == 64);
  CHECK(tg::parameter_count(enc.parameters()) < 1000000);

  // The imagenet stem reduces 8x8 to 2x2 before the stages.
  tg::Tape<double> tape;
  EncoderConfig in_cfg = tiny();
  in_cfg.stem = Stem::imagenet;
  std::mt19937_64 rng2(2);
  Encoder<double> inet(in_cfg, rng2);
  CHECK(inet.parameters().front().tensor.shape() == tg::Shape{4, 3, 7, 7});
  const T x = to_tensor<double>(random_batch(4, 8, 8, 3));
  CHECK(inet.forward(tape, x, {}).shape() == tg::Shape{4, 6});
}

TEST_CASE("width multiplier scales conv parameters quadratically") {
  EncoderConfig a;
  EncoderConfig b;
  b.width_multiplier = 2.0;
  std::mt19937_64 r1(1), r2(1);
  Encoder<double> e1(a, r1), e2(b, r2);
  const double ratio = double(conv_params(e2.parameters())) / double(conv_params(e1.parameters()));
  CHECK(ratio > 3.9);
  CHECK(ratio <= 4.0);
  CHECK(e2.representation_dim() == 128);
}

TEST_CASE("same seed gives identical initial parameters") {
  SimClrModel<double> m1(tiny(), {}, 17), m2(tiny(), {}, 17), m3(tiny(), {}, 18);
  const auto p1 = m1.parameters(), p2 = m2.parameters(), p3 = m3.parameters();
  REQUIRE(p1.size() == p2.size());
  bool differs = false;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].tensor.value() == p2[i].tensor.value());
    differs = differs || p1[i].tensor.value() != p3[i].tensor.value();
  }
  CHECK(differs);
}

TEST_CASE("invalid encoder configurations") {
  std::mt19937_64 rng(1);
  EncoderConfig empty;
  empty.widths.clear();
  empty.blocks.clear();
  CHECK_THROWS_AS(Encoder<double>(empty, rng), ContractError);
  EncoderConfig mismatch;
  mismatch.blocks = {1};
  CHECK_THROWS_AS(Encoder<double>(mismatch, rng), ContractError);
  EncoderConfig zero_width;
  zero_width.widths = {16, 0, 8};
  CHECK_THROWS_AS(Encoder<double>(zero_width, rng), ContractError);
  CHECK(parse_stem("imagenet") == Stem::imagenet);
  CHECK_THROWS_AS(parse_head_kind("deep"), ContractError);
}

TEST_CASE("projection heads") {
  std::mt19937_64 rng(5);
  tg::Tape<double> tape;
  const T h = T::from_matrix(tg::Matrix<double>::Random(3, 8));

  ProjectionHead<double> none({HeadKind::none, 0, 128}, 8, rng);
  const T z0 = none.forward(tape, h);
  CHECK(z0.value() == h.value());
  CHECK(none.output_dim() == 8);
  CHECK(none.parameters().empty());

  ProjectionHead<double> mlp({HeadKind::mlp, 0, 128}, 8, rng);
  CHECK(mlp.forward(tape, h).shape() == tg::Shape{3, 128});
  CHECK(mlp.parameters()[0].tensor.shape() == tg::Shape{8, 8});

  // Square linear head used for spectrum analysis.
  ProjectionHead<double> lin({HeadKind::linear, 0, 8}, 8, rng);
  CHECK(lin.parameters()[0].tensor.shape() == tg::Shape{8, 8});
  const T zl = lin.forward(tape, h);
  const tg::Matrix<double> expected = h.rows_view() * lin.parameters()[0].tensor.rows_view().transpose();
  CHECK(zl.rows_view().isApprox(expected, 1e-14));

  CHECK_THROWS_AS(mlp.forward(tape, T::from_matrix(tg::Matrix<double>::Random(3, 7))), DimensionError);
}

TEST_CASE("encode_pair interleaves views and shares weights") {
  SimClrModel<double> model(tiny(), {HeadKind::mlp, 0, 5}, 3);
  const auto views = random_batch(3, 6, 6, 9);
  tg::Tape<double> tape;
  auto out = encode_pair(tape, model, views, views, {});
  CHECK(out.h.shape() == tg::Shape{6, 6});
  CHECK(out.z.shape() == tg::Shape{6, 5});
  const auto z = out.z.rows_view();
  for (Index k = 0; k < 3; ++k) CHECK((z.row(2 * k) - z.row(2 * k + 1)).norm() < 1e-12);

  // Perturbing one encoder weight moves both branches of an item by the same amount.
  model.encoder().parameters()[0].tensor.value()[4] += 0.05;
  tg::Tape<double> tape2;
  auto moved = encode_pair(tape2, model, views, views, {});
  const tg::Matrix<double> delta = moved.z.rows_view() - out.z.rows_view();
  CHECK(delta.norm() > 0.0);
  for (Index k = 0; k < 3; ++k) CHECK((delta.row(2 * k) - delta.row(2 * k + 1)).norm() < 1e-12);

  CHECK_THROWS_AS(encode_pair(tape, model, views, random_batch(2, 6, 6, 1), {}), ContractError);
}

TEST_CASE("representation dim does not depend on input size") {
  SimClrModel<double> model(tiny(), {}, 4);
  for (Index s : {5, 8, 13}) {
    tg::Tape<double> tape;
    CHECK(model.encoder().forward(tape, to_tensor<double>(random_batch(2, s, s, 1)), {}).dim(1) == 6);
  }
}

TEST_CASE("eval mode needs accumulated running statistics") {
  SimClrModel<double> model(tiny(), {}, 4);
  tg::Tape<double> tape;
  const T x = to_tensor<double>(random_batch(2, 6, 6, 1));
  ForwardContext<double> eval;
  eval.mode = tg::BnMode::eval;
  CHECK_THROWS_AS(model.encoder().forward(tape, x, eval), StateError);
  model.encoder().forward(tape, x, {});
  CHECK_NOTHROW(model.encoder().forward(tape, x, eval));
}

TEST_CASE("parameter gradients of the full model match finite differences") {
  SimClrModel<double> model(tiny(), {HeadKind::mlp, 0, 4}, 8);
  const auto a = random_batch(3, 6, 6, 21), b = random_batch(3, 6, 6, 22);
  ForwardContext<double> ctx;
  ctx.update_running = false;
  auto loss_of = [&](tg::Tape<double>& tape) {
    auto out = encode_pair(tape, model, a, b, ctx);
    return tg::sum_squares(tape, out.z);
  };
  auto params = model.parameters();
  tg::zero_grads(params);
  {
    tg::Tape<double> tape;
    const T loss = loss_of(tape);
    tape.backward(loss);
  }
  std::mt19937_64 pick(3);
  for (auto& p : params) {
    const Vector<double> analytic = p.tensor.grad();
    for (int trial = 0; trial < 3; ++trial) {
      const Index i = std::uniform_int_distribution<Index>(0, p.tensor.numel() - 1)(pick);
      const double saved = p.tensor.value()[i];
      const double step = 1e-6;
      p.tensor.value()[i] = saved + step;
      tg::Tape<double> t1;
      t1.set_enabled(false);
      const double up = loss_of(t1).item();
      p.tensor.value()[i] = saved - step;
      tg::Tape<double> t2;
      t2.set_enabled(false);
      const double down = loss_of(t2).item();
      p.tensor.value()[i] = saved;
      const double fd = (up - down) / (2 * step);
      const double err = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
      CAPTURE(p.name);
      CHECK(err < 1e-4);
    }
  }
}
