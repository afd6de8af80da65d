#include <map>

#include "binary_io.hpp"
#include "caselab/model.hpp"

namespace caselab {

namespace {

constexpr std::string_view kWeightsMagic{"CASEW1\0", 7};
constexpr std::uint32_t kWeightsVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_weights(const ModelBundle& model) {
  const auto named = model.named_weights();
  detail::ByteWriter w;
  w.bytes(kWeightsMagic);
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(tensor->rank()));
    for (std::size_t d : tensor->dims()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : tensor->values()) w.f64(v);
  }
  return w.take();
}

ModelBundle decode_weights(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kWeightsMagic);
  const std::size_t version_at = r.offset();
  if (r.u32() != kWeightsVersion) throw ParseError("unsupported weights version", version_at);
  const std::uint32_t count = r.u32();

  struct Entry {
    Tensor tensor;
    std::size_t offset;
  };
  std::map<std::string, Entry> entries;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t entry_at = r.offset();
    const std::uint16_t name_len = r.u16();
    std::string name = r.string(name_len);
    const std::uint8_t rank = r.u8();
    Shape dims(rank);
    for (auto& d : dims) {
      const std::size_t dim_at = r.offset();
      d = r.u32();
      if (d == 0) throw ParseError("zero tensor extent in '" + name + "'", dim_at);
    }
    const std::size_t n = element_count(dims);
    r.need(n * 8);
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    if (!entries.emplace(name, Entry{Tensor(std::move(dims), std::move(values)), entry_at}).second) {
      throw ParseError("duplicate tensor '" + name + "'", entry_at);
    }
  }
  if (!r.at_end()) throw ParseError("trailing bytes after weights", r.offset());

  ModelBundle model = make_model(0);
  const auto expected = model.named_weights();
  std::size_t slot = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (auto& param : model.params[i]) {
      const std::string& name = expected[slot++].first;
      auto it = entries.find(name);
      if (it == entries.end()) throw ParseError("missing tensor '" + name + "'", r.offset());
      if (it->second.tensor.dims() != param.dims()) {
        throw ParseError("tensor '" + name + "' has shape " + to_string(it->second.tensor.dims()) +
                             ", expected " + to_string(param.dims()),
                         it->second.offset);
      }
      param = std::move(it->second.tensor);
      entries.erase(it);
    }
  }
  if (!entries.empty()) {
    throw ParseError("unexpected tensor '" + entries.begin()->first + "'",
                     entries.begin()->second.offset);
  }
  return model;
}

void save_weights(const ModelBundle& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_weights(model));
}

ModelBundle load_weights(const std::filesystem::path& path) {
  return decode_weights(detail::read_file(path));
}

}  // namespace caselab
