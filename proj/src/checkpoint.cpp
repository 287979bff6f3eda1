#include "ser/checkpoint.hpp"

#include "binary_io.hpp"

namespace ser {
namespace {

constexpr std::string_view kMagic = "SERCKPT1";
constexpr std::uint8_t kDtypeF32 = 0;

}  // namespace

template <typename S>
void save_checkpoint(const ModelParams<S>& params, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.bytes(kMagic);
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    out.u16(static_cast<std::uint16_t>(e.name.size()));
    out.bytes(e.name);
    out.u8(kDtypeF32);
    out.u8(static_cast<std::uint8_t>(e.tensor.rank()));
    for (Index d : e.tensor.shape()) out.u32(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < e.tensor.size(); ++i) out.f32(static_cast<float>(e.tensor.values()[i]));
  }
  out.save(path);
}

template <typename S>
ModelParams<S> load_checkpoint(const std::filesystem::path& path, const ArchConfig& cfg) {
  const auto specs = param_specs(cfg);
  detail::ByteReader in(detail::ByteReader::slurp(path), ErrorCode::ShapeMismatch);
  if (in.remaining() < kMagic.size() || in.bytes(kMagic.size()) != kMagic)
    throw Error(ErrorCode::BadMagic, path.string() + " is not a SERCKPT1 checkpoint");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                std::to_string(kCheckpointVersion));
  const std::uint32_t count = in.u32();
  if (count != specs.size())
    throw Error(ErrorCode::ShapeMismatch, "checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                                              std::to_string(specs.size()));

  ModelParams<S> params;
  for (const auto& spec : specs) {
    const std::string name = in.bytes(in.u16());
    if (name != spec.name)
      throw Error(ErrorCode::ShapeMismatch, "expected tensor " + spec.name + ", found " + name);
    const std::uint8_t dtype = in.u8();
    if (dtype != kDtypeF32) throw Error(ErrorCode::ShapeMismatch, name + ": unsupported dtype " + std::to_string(dtype));
    const std::uint8_t ndim = in.u8();
    Shape shape(ndim);
    for (auto& d : shape) d = in.u32();
    if (shape != spec.shape)
      throw Error(ErrorCode::ShapeMismatch, name + ": checkpoint shape " + shape_string(shape) + ", architecture expects " +
                                                shape_string(spec.shape));
    const Index n = numel(shape);
    in.need(static_cast<std::size_t>(n) * 4);
    typename Tensor<S>::Array values(n);
    for (Index i = 0; i < n; ++i) values[i] = static_cast<S>(in.f32());
    params.add(name, Tensor<S>(shape, std::move(values)), spec.trainable);
  }
  if (in.remaining() != 0) throw Error(ErrorCode::ShapeMismatch, path.string() + ": trailing bytes after last tensor");
  return params;
}

template void save_checkpoint(const ModelParams<float>&, const std::filesystem::path&);
template void save_checkpoint(const ModelParams<double>&, const std::filesystem::path&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&, const ArchConfig&);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&, const ArchConfig&);

}  // namespace ser
