#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "packetclip/embed.hpp"
#include "packetclip/error.hpp"
#include "packetclip/ingest.hpp"
#include "packetclip/rng.hpp"

using namespace packetclip;
using namespace packetclip::embed;

namespace {

BaseEncoder packet_encoder(int dim = 256) {
  BaseEncoderConfig cfg;
  cfg.modality = BaseEncoderConfig::Modality::packet;
  cfg.output_dim = dim;
  return BaseEncoder(cfg);
}

BaseEncoder text_encoder(int dim = 256) {
  BaseEncoderConfig cfg;
  cfg.modality = BaseEncoderConfig::Modality::text;
  cfg.output_dim = dim;
  return BaseEncoder(cfg);
}

}  // namespace

TEST_CASE("packet encoder: empty payload gives zero vector with warning") {
  auto enc = packet_encoder();
  bool warn = false;
  Mat v = enc.encode_packet({}, &warn);
  CHECK(warn);
  CHECK(v.frob_norm() == 0.0);
}

TEST_CASE("packet encoder: deterministic and unit norm") {
  auto enc = packet_encoder();
  std::vector<uint8_t> payload = {1, 2, 3, 4, 5, 200, 201};
  Mat a = enc.encode_packet(payload);
  Mat b = enc.encode_packet(payload);
  CHECK(a.values() == b.values());
  CHECK(a.frob_norm() == doctest::Approx(1.0));
}

TEST_CASE("packet encoder: synth classes separate in cosine (statistics oracle)") {
  auto data = ingest::synth_dataset(3, 60, 17);
  auto enc = packet_encoder(512);
  std::map<std::string, std::vector<Mat>> by_class;
  for (const auto& r : data.seq.records) by_class[r.label].push_back(enc.encode_packet(r.payload));

  auto mean_cos = [](const std::vector<Mat>& xs, const std::vector<Mat>& ys, bool same) {
    double s = 0;
    int n = 0;
    for (size_t i = 0; i < xs.size(); ++i)
      for (size_t j = same ? i + 1 : 0; j < ys.size(); ++j) {
        s += cosine(xs[i], ys[j]);
        ++n;
      }
    return s / n;
  };
  double intra = (mean_cos(by_class["dos"], by_class["dos"], true) +
                  mean_cos(by_class["reconnaissance"], by_class["reconnaissance"], true)) /
                 2.0;
  double inter = mean_cos(by_class["dos"], by_class["reconnaissance"], false);
  INFO("intra=", intra, " inter=", inter);
  CHECK(inter < intra);
}

TEST_CASE("text encoder: empty text zero vector, unigram bag symmetry") {
  BaseEncoderConfig cfg;
  cfg.modality = BaseEncoderConfig::Modality::text;
  cfg.output_dim = 128;
  BaseEncoder enc(cfg);
  bool warn = false;
  Mat z = enc.encode_text("", &warn);
  CHECK(warn);
  CHECK(z.frob_norm() == 0.0);
  // bigram features are order sensitive, so compare the two-token case where
  // the only bigram differs but unigrams dominate equality via single words
  Mat a = enc.encode_text("alpha");
  Mat b = enc.encode_text("Alpha!");
  CHECK(a.values() == b.values());  // case folding and punctuation stripping
}

TEST_CASE("text encoder: different sentences are not identical directions") {
  auto enc = text_encoder();
  Mat a = enc.encode_text("dos attack");
  Mat b = enc.encode_text("port scanning");
  CHECK(cosine(a, b) < 1.0);
}

TEST_CASE("project: identity weight and zero bias reproduce the base") {
  Mat base = Mat::row_vec({1.0, -2.0, 3.0});
  auto head = ProjectionHead::make_identity(3);
  head.identity = false;  // use the actual multiply path
  Mat out = project(base, head);
  CHECK(out.values() == base.values());
}

TEST_CASE("project: zero weight leaves only bias") {
  ProjectionHead head;
  head.weight = Mat(2, 3);
  head.bias = Mat::row_vec({0.5, -0.5});
  Mat out = project(Mat::row_vec({9, 9, 9}), head);
  CHECK(out.at(0, 0) == 0.5);
  CHECK(out.at(0, 1) == -0.5);
}

TEST_CASE("project: random case matches brute-force multiply oracle") {
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    int in = 2 + int(rng.uniform_int(6));
    int out_dim = 2 + int(rng.uniform_int(6));
    ProjectionHead head;
    head.weight = Mat::random_uniform(out_dim, in, -1, 1, rng);
    head.bias = Mat::random_uniform(1, out_dim, -1, 1, rng);
    Mat x = Mat::random_uniform(1, in, -1, 1, rng);
    Mat got = project(x, head);
    for (int r = 0; r < out_dim; ++r) {
      double expect = head.bias.at(0, r);
      for (int c = 0; c < in; ++c) expect += head.weight.at(r, c) * x.at(0, c);
      CHECK(got.at(0, r) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("project: dimension mismatch raises shape-error with both dims") {
  auto head = ProjectionHead::init(4, 8, 1);
  try {
    project(Mat(1, 5), head);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::shape);
    CHECK(std::string(e.what()).find("5") != std::string::npos);
    CHECK(std::string(e.what()).find("8") != std::string::npos);
  }
}

TEST_CASE("project is affine: project(x) - project(0) is linear") {
  Rng rng(44);
  auto head = ProjectionHead::init(5, 7, 9);
  Mat zero(1, 7);
  Mat p0 = project(zero, head);
  for (int trial = 0; trial < 10; ++trial) {
    Mat x = Mat::random_uniform(1, 7, -2, 2, rng);
    Mat y = Mat::random_uniform(1, 7, -2, 2, rng);
    double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    Mat combo(1, 7);
    for (int c = 0; c < 7; ++c) combo.at(0, c) = alpha * x.at(0, c) + beta * y.at(0, c);
    Mat lhs = project(combo, head);
    Mat px = project(x, head);
    Mat py = project(y, head);
    for (int c = 0; c < 5; ++c) {
      double linear = alpha * (px.at(0, c) - p0.at(0, c)) + beta * (py.at(0, c) - p0.at(0, c));
      CHECK(lhs.at(0, c) - p0.at(0, c) == doctest::Approx(linear).epsilon(1e-9));
    }
  }
}

TEST_CASE("cosine: fixed points and symmetry bound") {
  Mat a = Mat::row_vec({1, 2, 3});
  CHECK(cosine(a, a) == doctest::Approx(1.0));
  Mat b = Mat::row_vec({0, 0, 1});
  Mat c = Mat::row_vec({0, 1, 0});
  CHECK(cosine(b, c) == doctest::Approx(0.0));
  Mat d = Mat::row_vec({-1, -2, -3});
  CHECK(cosine(a, d) == doctest::Approx(-1.0));
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    Mat x = Mat::random_uniform(1, 6, -1, 1, rng);
    Mat y = Mat::random_uniform(1, 6, -1, 1, rng);
    CHECK(cosine(x, y) == doctest::Approx(cosine(y, x)));
    CHECK(std::abs(cosine(x, y)) <= 1.0 + 1e-12);
  }
}

TEST_CASE("cosine: zero vector convention") {
  bool flag = false;
  CHECK(cosine(Mat(1, 4), Mat::row_vec({1, 2, 3, 4}), &flag) == 0.0);
  CHECK(flag);
}

TEST_CASE("head init: bounded by 1/sqrt(input_dim) and seeded") {
  auto a = ProjectionHead::init(16, 64, 5);
  auto b = ProjectionHead::init(16, 64, 5);
  auto c = ProjectionHead::init(16, 64, 6);
  CHECK(a.weight.values() == b.weight.values());
  CHECK(a.weight.values() != c.weight.values());
  double bound = 1.0 / std::sqrt(64.0);
  for (double v : a.weight.values()) CHECK(std::abs(v) <= bound);
  for (double v : a.bias.values()) CHECK(v == 0.0);
}

TEST_CASE("head checkpoint round-trip") {
  auto head = ProjectionHead::init(8, 12, 77);
  auto j = head_to_json(head);
  auto back = head_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.weight.values() == head.weight.values());
  CHECK(back.bias.values() == head.bias.values());
  CHECK(back.seed == head.seed);
  CHECK(back.identity == head.identity);
}

TEST_CASE("external-import: same vectors file loads to identical encodings") {
  namespace fs = std::filesystem;
  auto path = (fs::temp_directory_path() / "pc_vectors.jsonl").string();
  std::vector<uint8_t> payload = {9, 8, 7, 6};
  std::string id = BaseEncoder::packet_id(payload);
  {
    std::ofstream f(path);
    f << nlohmann::json{{"id", id}, {"vec", {1.0, 2.0, 3.0}}}.dump() << "\n";
  }
  BaseEncoderConfig cfg;
  cfg.modality = BaseEncoderConfig::Modality::packet;
  cfg.kind = BaseEncoderConfig::Kind::external_import;
  cfg.output_dim = 3;
  cfg.vectors_path = path;
  BaseEncoder enc1(cfg);
  BaseEncoder enc2(cfg);
  CHECK(enc1.encode_packet(payload).values() == enc2.encode_packet(payload).values());
  CHECK(enc1.encode_packet(payload).at(0, 1) == 2.0);
  // unknown sample id fails loudly
  CHECK_THROWS_AS(enc1.encode_packet({1, 1, 1}), Error);
}
