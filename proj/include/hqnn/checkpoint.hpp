#pragma once

#include <filesystem>

#include "hqnn/models.hpp"

namespace hqnn::train {

/// Binary checkpoint: magic `HQNN`, format version u32, head-type byte
/// (00 classical / 01 quantum), tensor count u32; each tensor as u16 name
/// length + name, u8 rank, u32 dims, f64 payload. All integers and floats
/// little-endian. A leading `__model_spec__` tensor carries the structural
/// description so a checkpoint loads without outside configuration.
void save_checkpoint(const models::Model& model,
                     const std::filesystem::path& path);

models::Model load_checkpoint(const std::filesystem::path& path);

} // namespace hqnn::train
