#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace c3 {

namespace {

template <typename Real>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<Real, float> ? 0 : 1;
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(char((std::uint64_t(value) >> (8 * i)) & 0xFF));
  }
  void put_bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  template <typename Real>
  void put_scalars(std::span<const Real> data) {
    if constexpr (std::endian::native == std::endian::little) {
      put_bytes(data.data(), data.size_bytes());
    } else {
      using U = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
      for (Real v : data) put(std::bit_cast<U>(v));
    }
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::kTruncated, "checkpoint " + path_ + " is truncated at byte " + std::to_string(pos_));
    }
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename Real>
  void get_scalars(std::span<Real> out) {
    need(out.size_bytes());
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
      pos_ += out.size_bytes();
    } else {
      using U = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
      for (auto& v : out) v = std::bit_cast<Real>(get<U>());
    }
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

template <typename Real>
void write_record(Writer& w, const std::string& name, const Shape& shape, std::span<const Real> data) {
  w.put(std::uint32_t(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put(dtype_tag<Real>());
  w.put(std::uint8_t(shape.size()));
  for (auto d : shape) w.put(std::uint64_t(d));
  w.put_scalars(data);
}

template <typename Real>
void read_record(Reader& r, const std::string& expected_name, const Shape& expected_shape, std::span<Real> out) {
  const auto name_len = r.template get<std::uint32_t>();
  if (name_len > 4096) fail(ErrorKind::kFormat, "checkpoint " + r.path() + ": implausible tensor name length");
  const auto name = r.get_string(name_len);
  if (name != expected_name) {
    fail(ErrorKind::kShapeMismatch,
         "checkpoint " + r.path() + ": expected tensor \"" + expected_name + "\", found \"" + name + "\"");
  }
  const auto dtype = r.template get<std::uint8_t>();
  if (dtype != dtype_tag<Real>()) {
    fail(ErrorKind::kFormat, "checkpoint " + r.path() + ": tensor " + name + " has dtype tag " +
                                 std::to_string(dtype) + ", expected " + std::to_string(dtype_tag<Real>()));
  }
  const auto ndim = r.template get<std::uint8_t>();
  Shape shape(ndim);
  for (auto& d : shape) d = std::size_t(r.template get<std::uint64_t>());
  if (shape != expected_shape) {
    fail(ErrorKind::kShapeMismatch, "checkpoint " + r.path() + ": tensor " + name + " has shape " + shape_str(shape) +
                                        ", config implies " + shape_str(expected_shape));
  }
  r.get_scalars(out);
}

Json vocab_json() {
  return Json{{"size", vocab::kSize},
              {"bos", vocab::kBos},
              {"eos", vocab::kEos},
              {"pad", vocab::kPad},
              {"prompt_begin", vocab::kPromptBegin}};
}

}  // namespace

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const CascadeModel<Real>& model, const TrainConfig& train,
                     const TrainState<Real>& state, const std::string& config_hash) {
  const auto params = model.parameters();
  const bool with_optimizer = state.adam.m.size() == params.size();
  Json model_json = to_json(model.config);
  model_json["prompt_ids"] = prompt_tokens();
  Json header{
      {"model", model_json},
      {"train", to_json(train)},
      {"vocab", vocab_json()},
      {"state",
       {{"step", state.adam.step},
        {"sampler", {{"engine", state.sampler.engine_state()}, {"order", state.sampler.order()}, {"cursor", state.sampler.cursor()}}},
        {"last_loss", state.last_loss},
        {"ema_loss", state.ema_loss},
        {"optimizer", with_optimizer}}},
      {"config_hash", config_hash},
      {"parameter_count", model.parameter_count()},
      {"tensor_count", params.size() * (with_optimizer ? 3 : 1)},
  };
  const std::string header_text = header.dump();

  Writer w;
  w.put_bytes("C3CK", 4);
  w.put(kCheckpointVersion);
  w.put(std::uint64_t(header_text.size()));
  w.put_bytes(header_text.data(), header_text.size());
  for (const auto& p : params) write_record<Real>(w, p.name, p.tensor.shape(), p.tensor.data());
  if (with_optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i)
      write_record<Real>(w, "adam.m." + params[i].name, params[i].tensor.shape(), state.adam.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i)
      write_record<Real>(w, "adam.v." + params[i].name, params[i].tensor.shape(), state.adam.v[i]);
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    if (!out) fail(ErrorKind::kIo, "short write to checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  if (r.get_string(4) != "C3CK") fail(ErrorKind::kFormat, "checkpoint " + path.string() + ": bad magic bytes");
  const auto version = r.template get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + ": unsupported format version " + std::to_string(version));
  }
  const auto header_len = r.template get<std::uint64_t>();
  const auto header_text = r.get_string(std::size_t(header_len));

  Checkpoint<Real> ck;
  try {
    ck.header = Json::parse(header_text);
    auto model_json = ck.header.at("model");
    model_json.erase("prompt_ids");
    CascadeConfig cfg;
    from_json(model_json, &cfg, "checkpoint.model");
    from_json(ck.header.at("train"), &ck.train, "checkpoint.train");
    if (ck.header.at("vocab") != vocab_json()) fail(ErrorKind::kFormat, "vocabulary differs from this build");
    ck.config_hash = ck.header.value("config_hash", "");
    ck.model = CascadeModel<Real>::init(cfg, 0);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + ": malformed header: " + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + ": malformed header: " + e.what());
  }

  const auto params = ck.model.parameters();
  bool with_optimizer = false;
  std::size_t tensor_count = 0;
  try {
    const auto& st = ck.header.at("state");
    with_optimizer = st.at("optimizer").template get<bool>();
    tensor_count = ck.header.at("tensor_count").template get<std::size_t>();
    ck.state.adam.step = st.at("step").template get<std::int64_t>();
    ck.state.last_loss = st.at("last_loss").template get<double>();
    ck.state.ema_loss = st.at("ema_loss").template get<double>();
    const auto& sm = st.at("sampler");
    ck.state.sampler.restore(sm.at("engine").template get<std::string>(), sm.at("order").template get<std::vector<std::uint32_t>>(),
                             sm.at("cursor").template get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + ": malformed state: " + e.what());
  }
  if (tensor_count != params.size() * (with_optimizer ? 3 : 1)) {
    fail(ErrorKind::kShapeMismatch, "checkpoint " + path.string() + ": header lists " + std::to_string(tensor_count) +
                                        " tensors, config implies " +
                                        std::to_string(params.size() * (with_optimizer ? 3 : 1)));
  }

  for (auto p : params) read_record<Real>(r, p.name, p.tensor.shape(), p.tensor.data());
  if (with_optimizer) {
    ck.state.adam.m.resize(params.size());
    ck.state.adam.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.state.adam.m[i].resize(params[i].tensor.numel());
      read_record<Real>(r, "adam.m." + params[i].name, params[i].tensor.shape(), std::span<Real>(ck.state.adam.m[i]));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.state.adam.v[i].resize(params[i].tensor.numel());
      read_record<Real>(r, "adam.v." + params[i].name, params[i].tensor.shape(), std::span<Real>(ck.state.adam.v[i]));
    }
  }
  if (!r.at_end()) fail(ErrorKind::kFormat, "checkpoint " + path.string() + ": trailing bytes after last tensor");
  return ck;
}

template void save_checkpoint(const std::filesystem::path&, const CascadeModel<float>&, const TrainConfig&,
                              const TrainState<float>&, const std::string&);
template void save_checkpoint(const std::filesystem::path&, const CascadeModel<double>&, const TrainConfig&,
                              const TrainState<double>&, const std::string&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace c3
