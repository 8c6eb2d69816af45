#include <doctest.h>

#include "ganprint/store.hpp"

#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace ganprint;
using namespace ganprint::store;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ganprint-store-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fingerprint::SvdBasis small_basis() {
  Eigen::MatrixXd x(6, 4);
  RngStream rng(1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return fingerprint::fit_svd(x, fingerprint::SvdPolicy::fixed(3));
}

}  // namespace

TEST_CASE("variant round trip is exact") {
  TempDir t;
  const auto base = modelzoo::build_base(modelzoo::arch_by_name("arch-a"), 3);
  const auto v = modelzoo::derive_variant(base, {4, 0.5, 11});
  save(v, t.path / "v.gpv");
  CHECK(load_variant(t.path / "v.gpv") == v);
  save(base, t.path / "b.gpv");
  CHECK(load_variant(t.path / "b.gpv") == base);
  CHECK(read_header(t.path / "v.gpv").kind == ArtifactKind::variant);
}

TEST_CASE("encoder, basis and metric round trips") {
  TempDir t;
  const auto net = encoder::init_encoder(encoder::EncoderSpec{}, 5);
  save(net, t.path / "e.gpe", {{"note", "x"}});
  nlohmann::json extra;
  const auto back = load_encoder(t.path / "e.gpe", &extra);
  CHECK(back.spec() == net.spec());
  CHECK(back.params() == net.params());
  CHECK(extra["note"] == "x");

  const auto basis = small_basis();
  save(basis, t.path / "b.gps");
  const auto b2 = load_svd(t.path / "b.gps");
  CHECK(b2.checksum() == basis.checksum());
  CHECK(b2.explained_variance_ratios == basis.explained_variance_ratios);
  CHECK(b2.fitted_on == basis.fitted_on);

  metric::LearnedMetric m;
  m.m = Eigen::MatrixXd::Identity(3, 3) * 2.0;
  m.tau = 0.75;
  m.margin = 1.5;
  m.objective_history = {3, 2, 1};
  save(m, t.path / "m.gpm");
  const auto m2 = load_metric(t.path / "m.gpm");
  CHECK(m2.m == m.m);
  CHECK(m2.tau == m.tau);
  CHECK(m2.margin == m.margin);
  CHECK(m2.objective_history == m.objective_history);
}

TEST_CASE("fingerprint sets carry ids and the basis checksum") {
  TempDir t;
  FingerprintSet set;
  set.basis_checksum = 0xdeadbeefcafef00dULL;
  for (int i = 0; i < 4; ++i) {
    fingerprint::FingerprintVector v;
    v.values = Eigen::VectorXd::Constant(3, i + 0.25);
    if (i != 2) v.model_id = "m" + std::to_string(i % 2);
    v.source_image_id = "img" + std::to_string(i);
    set.vectors.push_back(v);
  }
  save_fingerprints(set, t.path / "f.gpf");
  const auto back = load_fingerprints(t.path / "f.gpf", set.basis_checksum);
  REQUIRE(back.vectors.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(back.vectors[i].values == set.vectors[i].values);
    CHECK(back.vectors[i].model_id == set.vectors[i].model_id);
    CHECK(back.vectors[i].source_image_id == set.vectors[i].source_image_id);
  }
  CHECK_THROWS_AS(load_fingerprints(t.path / "f.gpf", 1), IntegrityError);
  fs::remove(t.path / "f.gpf.json");
  CHECK_THROWS_AS(load_fingerprints(t.path / "f.gpf"), IoError);
}

TEST_CASE("activation sets and manifests round trip") {
  TempDir t;
  ActivationSet a{{{1.f, 2.f}, {3.f, 4.f}}, {"a", "b"}, {"i0", "i1"}};
  save_activations(a, t.path / "a.gpa");
  const auto a2 = load_activations(t.path / "a.gpa");
  CHECK(a2.rows == a.rows);
  CHECK(a2.model_ids == a.model_ids);

  Manifest m;
  m.entries.push_back({"x/0.png", "m0", 42, std::nullopt, "train", std::nullopt});
  m.entries.push_back({"x/1.png", "m1", 43, std::string("jpeg:50"), "test", std::string("x/9.png")});
  save_manifest(m, t.path / "manifest.json");
  CHECK(load_manifest(t.path / "manifest.json") == m);
  CHECK(m.model_ids() == std::vector<std::string>{"m0", "m1"});
  CHECK(m.filter_split("test").entries.size() == 1);
}

TEST_CASE("truncation and bit flips are detected") {
  TempDir t;
  const auto p = t.path / "b.gps";
  save(small_basis(), p);
  const auto good = slurp(p);

  auto truncated = good;
  truncated.resize(good.size() - 5);
  spit(p, truncated);
  CHECK_THROWS_AS(load_svd(p), IntegrityError);

  spit(p, std::vector<char>(good.begin(), good.begin() + 20));
  CHECK_THROWS_AS(load_svd(p), IntegrityError);

  // Flip one bit at several positions: header, metadata, payload.
  for (std::size_t pos : {std::size_t{3}, std::size_t{41}, good.size() / 2, good.size() - 1}) {
    auto flipped = good;
    flipped[pos] = static_cast<char>(flipped[pos] ^ 0x10);
    spit(p, flipped);
    CHECK_THROWS_AS(load_svd(p), IntegrityError);
  }
  auto padded = good;
  padded.push_back('x');
  spit(p, padded);
  CHECK_THROWS_AS(load_svd(p), IntegrityError);

  spit(p, good);
  CHECK_NOTHROW(load_svd(p));
  CHECK_THROWS_AS(load_svd(t.path / "missing.gps"), IoError);
}

TEST_CASE("wrong artifact kind is rejected") {
  TempDir t;
  save(small_basis(), t.path / "b.gps");
  CHECK_THROWS_AS(load_metric(t.path / "b.gps"), KindMismatch);
  CHECK_THROWS_AS(load_encoder(t.path / "b.gps"), KindMismatch);
  CHECK_THROWS_AS(read_container(t.path / "b.gps", ArtifactKind::variant), KindMismatch);
  CHECK(std::string(kind_name(ArtifactKind::svd)).size() > 0);
}

TEST_CASE("atomic text writes and checksums") {
  TempDir t;
  write_text_atomic(t.path / "a.txt", "foobar");
  CHECK(read_text(t.path / "a.txt") == "foobar");
  CHECK(file_checksum(t.path / "a.txt") == 0x85944171f73967e8ULL);
  write_text_atomic(t.path / "a.txt", "x");
  CHECK(read_text(t.path / "a.txt") == "x");
  int files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(t.path)) ++files;
  CHECK(files == 1);
}
