#pragma once

#include <string>
#include <utility>

#include "plscore/model.hpp"
#include "plscore/text.hpp"

namespace plscore {

// Checkpoint layout: magic "PLSC", u16 format version, u32 JSON length,
// JSON block (model config, head flag, vocab), parameter arrays as
// little-endian 32-bit floats in declared order, trailing CRC32 of all
// preceding bytes. Saving rounds parameters to float32.
void save_checkpoint(const Model& model, const Vocab& vocab,
                     const std::string& path);

std::pair<Model, Vocab> load_checkpoint(const std::string& path);

std::uint32_t crc32(const unsigned char* data, std::size_t len);

}  // namespace plscore
