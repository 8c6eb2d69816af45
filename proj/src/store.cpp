#include "ganprint/store.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <unistd.h>

namespace ganprint::store {

static_assert(std::endian::native == std::endian::little, "payloads are written in native little-endian order");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'G', 'P', 'S', 'T', 'O', 'R', 'E', '1'};
constexpr std::size_t kFixedHeader = 8 + 4 + 4 + 8 + 8 + 8;

template <class T>
void put(std::vector<std::byte>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
void put_array(std::vector<std::byte>& out, const T* data, std::size_t n) {
  const auto* p = reinterpret_cast<const std::byte*>(data);
  out.insert(out.end(), p, p + n * sizeof(T));
}

template <class T>
T get(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

class Reader {
 public:
  Reader(const std::vector<std::byte>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  template <class T>
  void read(T* out, std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    if (pos_ + bytes > buf_.size()) throw IntegrityError(what_ + ": payload shorter than its metadata declares");
    std::memcpy(out, buf_.data() + pos_, bytes);
    pos_ += bytes;
  }
  void finish() const {
    if (pos_ != buf_.size()) throw IntegrityError(what_ + ": payload longer than its metadata declares");
  }

 private:
  const std::vector<std::byte>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum_of(std::string_view meta, std::span<const std::byte> payload) {
  const std::uint64_t h = fnv1a64(std::as_bytes(std::span<const char>(meta.data(), meta.size())));
  return fnv1a64(payload, h);
}

std::vector<std::byte> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

ArtifactKind kind_from_int(std::uint32_t v, const fs::path& path) {
  if (v < 1 || v > 7) throw IntegrityError("'" + path.string() + "': unknown artifact kind " + std::to_string(v));
  return static_cast<ArtifactKind>(v);
}

struct Parsed {
  ArtifactHeader header;
  std::size_t payload_offset = 0;
};

Parsed parse_header(const std::vector<std::byte>& buf, const fs::path& path, bool need_payload) {
  const std::string where = "'" + path.string() + "'";
  if (buf.size() < kFixedHeader) throw IntegrityError(where + ": truncated header");
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) throw IntegrityError(where + ": not a ganprint artifact");
  Parsed p;
  p.header.version = get<std::uint32_t>(buf.data() + 8);
  if (p.header.version != kFormatVersion) {
    throw IntegrityError(where + ": unsupported format version " + std::to_string(p.header.version));
  }
  p.header.kind = kind_from_int(get<std::uint32_t>(buf.data() + 12), path);
  const auto meta_len = get<std::uint64_t>(buf.data() + 16);
  p.header.payload_size = get<std::uint64_t>(buf.data() + 24);
  p.header.checksum = get<std::uint64_t>(buf.data() + 32);
  if (meta_len > buf.size() - kFixedHeader) throw IntegrityError(where + ": truncated metadata (checksum cannot match)");
  const std::string_view meta(reinterpret_cast<const char*>(buf.data() + kFixedHeader), meta_len);
  p.payload_offset = kFixedHeader + meta_len;
  if (need_payload) {
    if (p.header.payload_size != buf.size() - p.payload_offset) {
      throw IntegrityError(where + ": payload length mismatch (file truncated or padded); checksum cannot match");
    }
    const std::span<const std::byte> payload(buf.data() + p.payload_offset, p.header.payload_size);
    if (checksum_of(meta, payload) != p.header.checksum) throw IntegrityError(where + ": checksum mismatch");
  }
  try {
    p.header.meta = json::parse(meta);
  } catch (const json::exception& e) {
    throw IntegrityError(where + ": malformed metadata: " + e.what());
  }
  return p;
}

json params_json(const std::optional<modelzoo::VariantParams>& p) {
  if (!p) return nullptr;
  return {{"k", p->k}, {"p", p->p}, {"seed", p->seed}};
}

template <class F>
auto guarded(const fs::path& path, F&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw IntegrityError("'" + path.string() + "': invalid metadata: " + e.what());
  }
}

void require_finite(const double* p, std::size_t n, const fs::path& path) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) throw IntegrityError("'" + path.string() + "': non-finite payload value");
  }
}

}  // namespace

const char* kind_name(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::variant: return "variant";
    case ArtifactKind::encoder: return "encoder";
    case ArtifactKind::svd: return "svd";
    case ArtifactKind::metric: return "metric";
    case ArtifactKind::manifest: return "manifest";
    case ArtifactKind::fingerprints: return "fingerprints";
    case ArtifactKind::activations: return "activations";
  }
  return "unknown";
}

void write_bytes_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "'");
  }
}

void write_text_atomic(const fs::path& path, std::string_view text) {
  write_bytes_atomic(path, std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t file_checksum(const fs::path& path) {
  const auto bytes = read_all(path);
  return fnv1a64(bytes);
}

std::size_t write_container(const fs::path& path, ArtifactKind kind, const json& meta,
                            std::span<const std::byte> payload) {
  const std::string meta_text = meta.dump();
  std::vector<std::byte> buf;
  buf.reserve(kFixedHeader + meta_text.size() + payload.size());
  buf.insert(buf.end(), reinterpret_cast<const std::byte*>(kMagic), reinterpret_cast<const std::byte*>(kMagic) + 8);
  put(buf, kFormatVersion);
  put(buf, static_cast<std::uint32_t>(kind));
  put(buf, static_cast<std::uint64_t>(meta_text.size()));
  put(buf, static_cast<std::uint64_t>(payload.size()));
  put(buf, checksum_of(meta_text, payload));
  put_array(buf, meta_text.data(), meta_text.size());
  buf.insert(buf.end(), payload.begin(), payload.end());
  write_bytes_atomic(path, buf);
  return buf.size();
}

ArtifactHeader read_header(const fs::path& path) { return parse_header(read_all(path), path, false).header; }

RawArtifact read_container(const fs::path& path, ArtifactKind expected) {
  auto buf = read_all(path);
  Parsed p = parse_header(buf, path, true);
  if (p.header.kind != expected) {
    throw KindMismatch("'" + path.string() + "': expected a " + kind_name(expected) + " artifact, found " +
                       kind_name(p.header.kind));
  }
  RawArtifact out;
  out.header = std::move(p.header);
  out.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(p.payload_offset), buf.end());
  return out;
}

// ---------------------------------------------------------------------------
// JSON conversions
// ---------------------------------------------------------------------------

json to_json(const modelzoo::ArchitectureSpec& arch) {
  json layers = json::array();
  for (const auto& l : arch.layers) {
    layers.push_back({{"name", l.name},
                      {"kind", modelzoo::layer_kind_name(l.kind)},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"kernel", l.kernel},
                      {"spatial", l.spatial},
                      {"perturbable", l.perturbable},
                      {"init_gain", l.init_gain},
                      {"bias_std", l.bias_std}});
  }
  return {{"arch_id", arch.arch_id},
          {"latent_dim", arch.latent_dim},
          {"layers", layers},
          {"output", {arch.output.height, arch.output.width, arch.output.channels}},
          {"leaky_slope", arch.leaky_slope}};
}

modelzoo::ArchitectureSpec arch_from_json(const json& j) {
  modelzoo::ArchitectureSpec a;
  a.arch_id = j.at("arch_id").get<std::string>();
  a.latent_dim = j.at("latent_dim").get<int>();
  for (const auto& l : j.at("layers")) {
    modelzoo::LayerDescriptor d;
    d.name = l.at("name").get<std::string>();
    d.kind = modelzoo::parse_layer_kind(l.at("kind").get<std::string>());
    d.in_channels = l.at("in_channels").get<int>();
    d.out_channels = l.at("out_channels").get<int>();
    d.kernel = l.at("kernel").get<int>();
    d.spatial = l.at("spatial").get<int>();
    d.perturbable = l.at("perturbable").get<bool>();
    d.init_gain = l.at("init_gain").get<double>();
    d.bias_std = l.at("bias_std").get<double>();
    a.layers.push_back(d);
  }
  const auto& o = j.at("output");
  a.output = {o.at(0).get<int>(), o.at(1).get<int>(), o.at(2).get<int>()};
  a.leaky_slope = j.at("leaky_slope").get<double>();
  return a;
}

json to_json(const encoder::EncoderSpec& s) {
  return {{"in_channels", s.in_channels},     {"in_height", s.in_height},
          {"in_width", s.in_width},           {"stem_channels", s.stem_channels},
          {"stage_channels", s.stage_channels}, {"stage_strides", s.stage_strides},
          {"num_classes", s.num_classes},     {"leaky_slope", s.leaky_slope}};
}

encoder::EncoderSpec encoder_spec_from_json(const json& j) {
  encoder::EncoderSpec s;
  s.in_channels = j.at("in_channels").get<int>();
  s.in_height = j.at("in_height").get<int>();
  s.in_width = j.at("in_width").get<int>();
  s.stem_channels = j.at("stem_channels").get<int>();
  s.stage_channels = j.at("stage_channels").get<std::array<int, encoder::kNumStages>>();
  s.stage_strides = j.at("stage_strides").get<std::array<int, encoder::kNumStages>>();
  s.num_classes = j.at("num_classes").get<int>();
  s.leaky_slope = j.at("leaky_slope").get<double>();
  return s;
}

json to_json(const Manifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je = {{"file", e.file}, {"model_id", e.model_id}, {"latent_seed", e.latent_seed}, {"split", e.split}};
    je["attack_tag"] = e.attack_tag ? json(*e.attack_tag) : json(nullptr);
    if (e.source) je["source"] = *e.source;
    entries.push_back(std::move(je));
  }
  return {{"kind", "manifest"}, {"version", kFormatVersion}, {"entries", entries}};
}

Manifest manifest_from_json(const json& j) {
  if (j.value("kind", std::string()) != "manifest") throw KindMismatch("expected a manifest document");
  Manifest m;
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.file = je.at("file").get<std::string>();
    e.model_id = je.at("model_id").get<std::string>();
    e.latent_seed = je.at("latent_seed").get<std::uint64_t>();
    e.split = je.value("split", std::string());
    if (je.contains("attack_tag") && !je["attack_tag"].is_null()) e.attack_tag = je["attack_tag"].get<std::string>();
    if (je.contains("source")) e.source = je["source"].get<std::string>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) { write_text_atomic(path, to_json(m).dump(1) + "\n"); }

Manifest load_manifest(const fs::path& path) {
  return guarded(path, [&] {
    try {
      return manifest_from_json(json::parse(read_text(path)));
    } catch (const json::parse_error& e) {
      throw IntegrityError("'" + path.string() + "': malformed manifest: " + e.what());
    }
  });
}

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

std::size_t save(const modelzoo::ModelVariant& v, const fs::path& path) {
  v.validate();
  std::vector<std::byte> payload;
  json groups = json::array();
  for (const auto& g : v.weights) {
    groups.push_back({{"name", g.name}, {"offset", payload.size()}, {"length", g.values.size() * sizeof(float)}});
    put_array(payload, g.values.data(), g.values.size());
  }
  json disc = {{"offset", payload.size()}, {"length", v.disc_weights.size() * sizeof(float)}};
  put_array(payload, v.disc_weights.data(), v.disc_weights.size());
  json meta = {{"variant_id", v.variant_id}, {"arch", to_json(v.arch)}, {"params", params_json(v.params)},
               {"groups", groups}, {"disc_weights", disc}};
  return write_container(path, ArtifactKind::variant, meta, payload);
}

modelzoo::ModelVariant load_variant(const fs::path& path) {
  const RawArtifact raw = read_container(path, ArtifactKind::variant);
  return guarded(path, [&] {
    const json& m = raw.header.meta;
    modelzoo::ModelVariant v;
    v.variant_id = m.at("variant_id").get<std::string>();
    v.arch = arch_from_json(m.at("arch"));
    if (!m.at("params").is_null()) {
      const auto& p = m["params"];
      v.params = modelzoo::VariantParams{p.at("k").get<int>(), p.at("p").get<double>(), p.at("seed").get<std::uint64_t>()};
    }
    auto slice = [&](const json& d) {
      const auto off = d.at("offset").get<std::size_t>();
      const auto len = d.at("length").get<std::size_t>();
      if (off > raw.payload.size() || len > raw.payload.size() - off || len % sizeof(float) != 0) {
        throw IntegrityError("'" + path.string() + "': weight slice outside payload");
      }
      std::vector<float> out(len / sizeof(float));
      std::memcpy(out.data(), raw.payload.data() + off, len);
      return out;
    };
    for (const auto& g : m.at("groups")) v.weights.push_back({g.at("name").get<std::string>(), slice(g)});
    v.disc_weights = slice(m.at("disc_weights"));
    try {
      v.validate();
    } catch (const SpecViolation& e) {
      throw IntegrityError("'" + path.string() + "': " + e.what());
    }
    return v;
  });
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

std::size_t save(const encoder::EncoderNet& net, const fs::path& path, const json& extra) {
  json layout = json::array();
  for (const auto& s : net.layout()) layout.push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  json meta = {{"spec", to_json(net.spec())}, {"layout", layout}, {"extra", extra}};
  return write_container(path, ArtifactKind::encoder, meta,
                         std::as_bytes(std::span<const float>(net.params().data(), net.params().size())));
}

encoder::EncoderNet load_encoder(const fs::path& path, json* extra) {
  const RawArtifact raw = read_container(path, ArtifactKind::encoder);
  return guarded(path, [&] {
    encoder::EncoderSpec spec = encoder_spec_from_json(raw.header.meta.at("spec"));
    try {
      spec.validate();
    } catch (const SpecViolation& e) {
      throw IntegrityError("'" + path.string() + "': " + e.what());
    }
    encoder::EncoderNet net(spec);
    const auto& layout = raw.header.meta.at("layout");
    if (layout.size() != net.layout().size()) throw IntegrityError("'" + path.string() + "': parameter layout differs");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& s = net.layout()[i];
      if (layout[i].at("name").get<std::string>() != s.name || layout[i].at("offset").get<std::size_t>() != s.offset ||
          layout[i].at("size").get<std::size_t>() != s.size) {
        throw IntegrityError("'" + path.string() + "': parameter layout differs at '" + s.name + "'");
      }
    }
    if (raw.payload.size() != net.params().size() * sizeof(float)) {
      throw IntegrityError("'" + path.string() + "': parameter payload has the wrong size");
    }
    std::memcpy(net.params().data(), raw.payload.data(), raw.payload.size());
    for (float v : net.params()) {
      if (!std::isfinite(v)) throw IntegrityError("'" + path.string() + "': non-finite encoder parameter");
    }
    if (extra != nullptr) *extra = raw.header.meta.value("extra", json::object());
    return net;
  });
}

// ---------------------------------------------------------------------------
// SVD bases and metrics
// ---------------------------------------------------------------------------

std::size_t save(const fingerprint::SvdBasis& b, const fs::path& path) {
  const auto d = static_cast<std::size_t>(b.dim());
  const auto big_d = static_cast<std::size_t>(b.input_dim());
  std::vector<std::byte> payload;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> comps = b.components;
  put_array(payload, comps.data(), d * big_d);
  put_array(payload, b.singular_values.data(), d);
  put_array(payload, b.mean.data(), big_d);
  put_array(payload, b.explained_variance_ratios.data(), d);
  json meta = {{"d", d}, {"input_dim", big_d}, {"fitted_on", b.fitted_on}, {"warnings", b.warnings},
               {"basis_checksum", hex64(b.checksum())}};
  return write_container(path, ArtifactKind::svd, meta, payload);
}

fingerprint::SvdBasis load_svd(const fs::path& path) {
  const RawArtifact raw = read_container(path, ArtifactKind::svd);
  return guarded(path, [&] {
    const auto d = raw.header.meta.at("d").get<std::size_t>();
    const auto big_d = raw.header.meta.at("input_dim").get<std::size_t>();
    if (d > big_d) throw IntegrityError("'" + path.string() + "': more components than input dimensions");
    fingerprint::SvdBasis b;
    b.fitted_on = raw.header.meta.at("fitted_on").get<std::size_t>();
    b.warnings = raw.header.meta.at("warnings").get<std::vector<std::string>>();
    Reader r(raw.payload, "'" + path.string() + "'");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> comps(d, big_d);
    r.read(comps.data(), d * big_d);
    b.components = comps;
    b.singular_values.resize(static_cast<Eigen::Index>(d));
    r.read(b.singular_values.data(), d);
    b.mean.resize(static_cast<Eigen::Index>(big_d));
    r.read(b.mean.data(), big_d);
    b.explained_variance_ratios.resize(d);
    r.read(b.explained_variance_ratios.data(), d);
    r.finish();
    require_finite(comps.data(), d * big_d, path);
    require_finite(b.mean.data(), big_d, path);
    if (d > 0) {
      const Eigen::MatrixXd gram = b.components * b.components.transpose();
      if ((gram - Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))).cwiseAbs().maxCoeff() > 1e-6) {
        throw IntegrityError("'" + path.string() + "': basis rows are not orthonormal");
      }
    }
    return b;
  });
}

std::size_t save(const metric::LearnedMetric& m, const fs::path& path) {
  const auto d = static_cast<std::size_t>(m.dim());
  std::vector<std::byte> payload;
  if (m.diag_only) {
    const Eigen::VectorXd diag = m.m.diagonal();
    put_array(payload, diag.data(), d);
  } else {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> full = m.m;
    put_array(payload, full.data(), d * d);
  }
  json meta = {{"d", d},
               {"tau", m.tau},
               {"diag_only", m.diag_only},
               {"margin", m.margin},
               {"config_digest", m.config_digest},
               {"objective_history", m.objective_history},
               {"warnings", m.warnings}};
  return write_container(path, ArtifactKind::metric, meta, payload);
}

metric::LearnedMetric load_metric(const fs::path& path) {
  const RawArtifact raw = read_container(path, ArtifactKind::metric);
  return guarded(path, [&] {
    const json& meta = raw.header.meta;
    metric::LearnedMetric m;
    const auto d = meta.at("d").get<std::size_t>();
    m.tau = meta.at("tau").get<double>();
    m.diag_only = meta.at("diag_only").get<bool>();
    m.margin = meta.at("margin").get<double>();
    m.config_digest = meta.at("config_digest").get<std::string>();
    m.objective_history = meta.at("objective_history").get<std::vector<double>>();
    m.warnings = meta.at("warnings").get<std::vector<std::string>>();
    if (!(m.tau > 0.0) || !std::isfinite(m.tau)) throw IntegrityError("'" + path.string() + "': tau must be positive");
    Reader r(raw.payload, "'" + path.string() + "'");
    const auto n = static_cast<Eigen::Index>(d);
    if (m.diag_only) {
      Eigen::VectorXd diag(n);
      r.read(diag.data(), d);
      m.m = diag.asDiagonal();
    } else {
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> full(n, n);
      r.read(full.data(), d * d);
      m.m = full;
    }
    r.finish();
    require_finite(m.m.data(), d * d, path);
    if ((m.m - m.m.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw IntegrityError("'" + path.string() + "': M is not symmetric");
    if (d > 0 && m.min_eigenvalue() < -1e-8) throw IntegrityError("'" + path.string() + "': M is not positive semidefinite");
    return m;
  });
}

// ---------------------------------------------------------------------------
// Fingerprint and activation sets
// ---------------------------------------------------------------------------

void save_fingerprints(const FingerprintSet& set, const fs::path& path) {
  const std::size_t n = set.vectors.size();
  const std::size_t d = n == 0 ? 0 : static_cast<std::size_t>(set.vectors.front().values.size());
  std::vector<std::byte> payload;
  payload.reserve(n * d * sizeof(double));
  json model_ids = json::array(), image_ids = json::array();
  for (const auto& v : set.vectors) {
    if (static_cast<std::size_t>(v.values.size()) != d) throw UsageError("save_fingerprints: vectors differ in length");
    put_array(payload, v.values.data(), d);
    model_ids.push_back(v.model_id ? json(*v.model_id) : json(nullptr));
    image_ids.push_back(v.source_image_id);
  }
  const std::string checksum = hex64(set.basis_checksum);
  write_container(path, ArtifactKind::fingerprints, {{"n", n}, {"d", d}, {"basis_checksum", checksum}}, payload);
  json sidecar = {{"kind", "fingerprints"}, {"n", n}, {"d", d}, {"basis_checksum", checksum},
                  {"model_ids", model_ids}, {"image_ids", image_ids}};
  write_text_atomic(fs::path(path.string() + ".json"), sidecar.dump(1) + "\n");
}

FingerprintSet load_fingerprints(const fs::path& path) {
  const RawArtifact raw = read_container(path, ArtifactKind::fingerprints);
  const fs::path side = path.string() + ".json";
  return guarded(path, [&] {
    json sidecar;
    try {
      sidecar = json::parse(read_text(side));
    } catch (const json::parse_error& e) {
      throw IntegrityError("'" + side.string() + "': malformed sidecar: " + e.what());
    }
    const auto n = raw.header.meta.at("n").get<std::size_t>();
    const auto d = raw.header.meta.at("d").get<std::size_t>();
    const auto checksum = raw.header.meta.at("basis_checksum").get<std::string>();
    if (sidecar.at("basis_checksum").get<std::string>() != checksum || sidecar.at("n").get<std::size_t>() != n ||
        sidecar.at("d").get<std::size_t>() != d) {
      throw IntegrityError("'" + side.string() + "' does not belong to '" + path.string() + "'");
    }
    const auto& model_ids = sidecar.at("model_ids");
    const auto& image_ids = sidecar.at("image_ids");
    if (model_ids.size() != n || image_ids.size() != n) throw IntegrityError("'" + side.string() + "': id count mismatch");
    FingerprintSet set;
    set.basis_checksum = std::stoull(checksum, nullptr, 16);
    Reader r(raw.payload, "'" + path.string() + "'");
    for (std::size_t i = 0; i < n; ++i) {
      fingerprint::FingerprintVector v;
      v.values.resize(static_cast<Eigen::Index>(d));
      r.read(v.values.data(), d);
      require_finite(v.values.data(), d, path);
      if (!model_ids[i].is_null()) v.model_id = model_ids[i].get<std::string>();
      v.source_image_id = image_ids[i].get<std::string>();
      set.vectors.push_back(std::move(v));
    }
    r.finish();
    return set;
  });
}

FingerprintSet load_fingerprints(const fs::path& path, std::uint64_t expected_basis_checksum) {
  FingerprintSet set = load_fingerprints(path);
  if (set.basis_checksum != expected_basis_checksum) {
    throw IntegrityError("'" + path.string() + "' was projected with basis " + hex64(set.basis_checksum) +
                         ", expected " + hex64(expected_basis_checksum));
  }
  return set;
}

void save_activations(const ActivationSet& set, const fs::path& path) {
  const std::size_t n = set.rows.size();
  const std::size_t d = n == 0 ? 0 : set.rows.front().size();
  if (set.model_ids.size() != n || set.image_ids.size() != n) throw UsageError("save_activations: id count mismatch");
  std::vector<std::byte> payload;
  payload.reserve(n * d * sizeof(float));
  for (const auto& r : set.rows) {
    if (r.size() != d) throw UsageError("save_activations: rows differ in length");
    put_array(payload, r.data(), d);
  }
  write_container(path, ArtifactKind::activations,
                  {{"n", n}, {"d", d}, {"model_ids", set.model_ids}, {"image_ids", set.image_ids}}, payload);
}

ActivationSet load_activations(const fs::path& path) {
  const RawArtifact raw = read_container(path, ArtifactKind::activations);
  return guarded(path, [&] {
    ActivationSet set;
    const auto n = raw.header.meta.at("n").get<std::size_t>();
    const auto d = raw.header.meta.at("d").get<std::size_t>();
    set.model_ids = raw.header.meta.at("model_ids").get<std::vector<std::string>>();
    set.image_ids = raw.header.meta.at("image_ids").get<std::vector<std::string>>();
    if (set.model_ids.size() != n || set.image_ids.size() != n) throw IntegrityError("'" + path.string() + "': id count mismatch");
    Reader r(raw.payload, "'" + path.string() + "'");
    set.rows.assign(n, std::vector<float>(d));
    for (auto& row : set.rows) r.read(row.data(), d);
    r.finish();
    return set;
  });
}

}  // namespace ganprint::store
