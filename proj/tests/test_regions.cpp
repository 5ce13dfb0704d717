#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "weakloc/regions.hpp"
#include "weakloc/saliency.hpp"

using namespace weakloc;

TEST_CASE("anchor generation counts and placement") {
  // single anchor covering the whole image
  const AnchorSet one = generate_anchors(64, 64, {64}, {64});
  REQUIRE(one.anchors.size() == 1);
  CHECK(one.anchors[0].cx == 32.0);
  CHECK(one.anchors[0].cy == 32.0);
  CHECK(one.anchors[0].w == 64.0);

  // (128-64)/64+1 = 2 per axis
  const AnchorSet four = generate_anchors(128, 128, {64}, {64});
  CHECK(four.anchors.size() == 4);

  // every anchor lies fully inside the image
  const AnchorSet multi = generate_anchors(128, 128, {32, 64, 96}, {16, 32, 48});
  for (const Box& a : multi.anchors) {
    CHECK(a.x0() >= 0.0);
    CHECK(a.y0() >= 0.0);
    CHECK(a.x1() <= 128.0);
    CHECK(a.y1() <= 128.0);
  }
  // counts follow the grid formula per scale
  std::size_t expect = 0;
  for (auto [size, stride] : {std::pair{32, 16}, {64, 32}, {96, 48}}) {
    const int n = (128 - size) / stride + 1;
    expect += std::size_t(n) * n;
  }
  CHECK(multi.anchors.size() == expect);

  CHECK_THROWS_AS(generate_anchors(32, 32, {64}, {16}), config_error);  // does not fit
  CHECK_THROWS_AS(generate_anchors(64, 64, {32, 64}, {16}), config_error);  // length mismatch
  CHECK_THROWS_AS(generate_anchors(64, 64, {32}, {16}, {2.0}), config_error);  // ratio != 1
}

TEST_CASE("anchor generation is translation-consistent") {
  const int size = 32, stride = 16;
  const AnchorSet small = generate_anchors(96, 96, {size}, {stride});
  const AnchorSet big = generate_anchors(96 + stride, 96 + stride, {size}, {stride});
  // anchors of the smaller grid shifted by one stride appear in the bigger grid
  for (const Box& a : small.anchors) {
    bool found = false;
    for (const Box& b : big.anchors)
      found = found || (b.cx == a.cx + stride && b.cy == a.cy + stride && b.w == a.w);
    CHECK(found);
  }
}

TEST_CASE("roi_align preserves constants and matches the ramp oracle") {
  Tape t;
  const double c = 3.25;
  Var feat = t.constant({2, 8, 8}, std::vector<double>(128, c));
  Var out = roi_align(feat, Box{16.0, 16.0, 20.0, 12.0}, 3, 3);
  REQUIRE(t.shape(out) == Shape{2, 3, 3});
  for (double v : t.value(out)) CHECK(v == Catch::Approx(c));

  // ramp f(col) = col: bilinear value at feature coordinate x is x - 0.5
  std::vector<double> ramp(64);
  for (int r = 0; r < 8; ++r)
    for (int cc = 0; cc < 8; ++cc) ramp[r * 8 + cc] = double(cc);
  Var rf = t.constant({1, 8, 8}, ramp);
  const Box box{16.0, 16.0, 16.0, 16.0};  // feature extent [2,6]x[2,6], well inside
  Var rout = roi_align(rf, box, 2, 2);
  const auto& rv = t.value(rout);
  for (int j = 0; j < 2; ++j) {
    const double x_feat = (box.x0() + (j + 0.5) * box.w / 2.0) / 4.0;
    CHECK(rv[j] == Catch::Approx(x_feat - 0.5));
    CHECK(rv[2 + j] == Catch::Approx(x_feat - 0.5));
  }
}

TEST_CASE("roi_align gradient matches finite differences") {
  Rng rng(17);
  Tensor feat = rand_uniform({2, 8, 8}, rng, -1.0, 1.0);
  Tensor w = rand_uniform({2, 3, 3}, rng, -1.0, 1.0);
  const double err = grad_check(
      [&](Tape& tp, Var v) {
        return vsum(mul(tp.constant(w), roi_align(v, Box{14.0, 17.0, 18.0, 14.0}, 3, 3)));
      },
      feat, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("roi_align flags degenerate boxes") {
  Tape t;
  Var feat = t.constant({1, 8, 8}, std::vector<double>(64, 1.0));
  Diagnostics diag;
  roi_align(feat, Box{16.0, 16.0, 0.25, 8.0}, 2, 2, 0.25, &diag);
  CHECK(diag.degenerate_boxes == 1);
}

TEST_CASE("roi_align is equivariant to adding a constant") {
  Rng rng(53);
  Tensor feat = rand_uniform({1, 8, 8}, rng, -1.0, 1.0);
  Tensor shifted = feat;
  for (double& v : shifted.data) v += 2.5;
  const Box box{13.0, 19.0, 16.0, 10.0};
  Tape t;
  const auto a = t.value(roi_align(t.constant(feat), box, 3, 3));
  const auto b = t.value(roi_align(t.constant(shifted), box, 3, 3));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] - 2.5 == Catch::Approx(a[i]));
}

TEST_CASE("apply_deltas analytic cases") {
  const Box anchor{32.0, 32.0, 64.0, 64.0};
  // zero deltas leave the anchor unchanged
  const Box same = apply_deltas(anchor, {0, 0, 0, 0}, 128, 128);
  CHECK(same.cx == anchor.cx);
  CHECK(same.cy == anchor.cy);
  CHECK(same.w == anchor.w);
  CHECK(same.h == anchor.h);

  // dw = ln 2 doubles the width (before clamping)
  const Box wide = apply_deltas(Box{64.0, 64.0, 32.0, 32.0}, {0, 0, std::log(2.0), 0}, 128, 128);
  CHECK(wide.w == Catch::Approx(64.0));
  CHECK(wide.h == Catch::Approx(32.0));

  // dx = 0.5 on a 64-wide anchor shifts the center +32 px
  const Box moved = apply_deltas(Box{48.0, 64.0, 64.0, 64.0}, {0.5, 0, 0, 0}, 256, 256);
  CHECK(moved.cx == Catch::Approx(80.0));

  // exp arguments clamp at 4
  const Box huge = apply_deltas(Box{500.0, 500.0, 2.0, 2.0}, {0, 0, 100.0, 0}, 1000, 1000);
  CHECK(huge.w == Catch::Approx(2.0 * std::exp(4.0)));

  // the result is clamped inside the image
  const Box clamped = apply_deltas(Box{8.0, 8.0, 16.0, 16.0}, {-2.0, 0, 0, 0}, 128, 128);
  CHECK(clamped.x0() >= 0.0);
  CHECK(clamped.w >= 1.0);
}

TEST_CASE("refine_boxes gradient matches finite differences away from clamps") {
  Rng rng(61);
  const std::vector<Box> anchors{Box{40.0, 40.0, 32.0, 32.0}, Box{80.0, 60.0, 48.0, 48.0}};
  Tensor deltas = rand_uniform({2, 4}, rng, -0.2, 0.2);
  Tensor w = rand_uniform({2, 4}, rng, -1.0, 1.0);
  const double err = grad_check(
      [&](Tape& tp, Var v) {
        return vsum(mul(tp.constant(w), refine_boxes(anchors, v, 128, 128)));
      },
      deltas, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("crop_resize identity, constants and gradients") {
  Rng rng(71);
  // whole-image box at native size reproduces the image exactly at grid points
  Tensor img = rand_uniform({1, 6, 6}, rng, 0.0, 1.0);
  Tape t;
  Var v = t.constant(img);
  Var out = crop_resize(v, Box{3.0, 3.0, 6.0, 6.0}, 6, 6);
  const auto& ov = t.value(out);
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(ov[i] == Catch::Approx(img.data[i]));

  // constant image gives a constant crop
  Var cimg = t.constant({3, 8, 8}, std::vector<double>(192, 0.4));
  for (double x : t.value(crop_resize(cimg, Box{4.0, 4.0, 5.0, 3.0}, 4, 4)))
    CHECK(x == Catch::Approx(0.4));

  // gradient w.r.t. the image
  Tensor big = rand_uniform({2, 8, 8}, rng, -1.0, 1.0);
  Tensor w = rand_uniform({2, 4, 4}, rng, -1.0, 1.0);
  const double err_img = grad_check(
      [&](Tape& tp, Var x) {
        return vsum(mul(tp.constant(w), crop_resize(x, Box{4.0, 4.5, 5.0, 4.0}, 4, 4)));
      },
      big, 1e-5);
  CHECK(err_img < 1e-4);

  // gradient w.r.t. the box coordinates
  Tensor box0({4}, {4.0, 4.5, 5.0, 4.0});
  const double err_box = grad_check(
      [&](Tape& tp, Var b) {
        return vsum(mul(tp.constant(w), crop_resize(tp.constant(big), b, 4, 4)));
      },
      box0, 1e-5);
  CHECK(err_box < 1e-4);
}

TEST_CASE("render_rpn_map weighted-mean cases") {
  std::vector<RefinedProposal> props;
  // single proposal: interior is 1 after normalization regardless of confidence
  props.push_back({0, 0, 0.7, Box{16.0, 16.0, 16.0, 16.0}});
  std::vector<int> flagged;
  SaliencyStack m = render_rpn_map(props, 2, 8, 8, 4.0, &flagged);
  CHECK(m.kind == SaliencyStack::Kind::rpn);
  CHECK(m.at(0, 3, 3) == Catch::Approx(1.0));
  CHECK(m.at(0, 0, 0) == 0.0);
  // the class with no proposals is flagged
  REQUIRE(flagged.size() == 1);
  CHECK(flagged[0] == 1);

  // two disjoint boxes with equal confidences: each interior holds 0.5
  props.clear();
  props.push_back({0, 0, 0.5, Box{8.0, 8.0, 12.0, 12.0}});
  props.push_back({1, 0, 0.5, Box{24.0, 24.0, 12.0, 12.0}});
  m = render_rpn_map(props, 1, 8, 8);
  CHECK(m.at(0, 2, 2) == Catch::Approx(0.5));
  CHECK(m.at(0, 6, 6) == Catch::Approx(0.5));

  // two identical boxes: interior value 1 for any confidences
  props.clear();
  props.push_back({0, 0, 0.9, Box{16.0, 16.0, 16.0, 16.0}});
  props.push_back({1, 0, 0.2, Box{16.0, 16.0, 16.0, 16.0}});
  m = render_rpn_map(props, 1, 8, 8);
  CHECK(m.at(0, 3, 3) == Catch::Approx(1.0));
}

TEST_CASE("render_rpn_map is invariant to uniform confidence scaling") {
  Rng rng(83);
  std::vector<RefinedProposal> props, scaled;
  for (int i = 0; i < 5; ++i) {
    RefinedProposal p{i, 0, uniform_in(rng, 0.1, 0.9),
                      Box{uniform_in(rng, 8, 24), uniform_in(rng, 8, 24), uniform_in(rng, 4, 12),
                          uniform_in(rng, 4, 12)}};
    props.push_back(p);
    p.confidence *= 7.0;
    scaled.push_back(p);
  }
  const SaliencyStack a = render_rpn_map(props, 1, 8, 8);
  const SaliencyStack b = render_rpn_map(scaled, 1, 8, 8);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == Catch::Approx(b.data[i]));
}
