#pragma once

#include "ser/model.hpp"

#include <filesystem>

namespace ser {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// SERCKPT1 layout: magic, u32 version, u32 tensor count, then per tensor
// u16 name length, name bytes, u8 dtype (0 = f32), u8 ndim, u32 dims...,
// little-endian float32 values. Tensors follow param_specs() order.

template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const std::filesystem::path& path);

/// Loads and validates against `cfg`: wrong magic -> BadMagic, other version
/// -> VersionMismatch, any name/shape/size disagreement or truncation ->
/// ShapeMismatch naming the tensor.
template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path, const ArchConfig& cfg);

}  // namespace ser
