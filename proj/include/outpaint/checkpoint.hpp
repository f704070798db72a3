#pragma once

#include <filesystem>
#include <optional>

#include "outpaint/discriminator.hpp"
#include "outpaint/generator.hpp"

// Checkpoint archive: a directory holding manifest.json plus raw
// little-endian float32 blobs (weights.bin for the generator, optional
// discriminator.bin). The manifest lists every tensor's name, shape, dtype
// and byte offset together with the grid, latent sizes, class count, and
// categorical/non-categorical mode. Saving a loaded checkpoint reproduces the
// original bytes.
namespace outpaint::checkpoint {

inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kGeneratorBlob = "weights.bin";
inline constexpr const char* kDiscriminatorBlob = "discriminator.bin";

void save(const std::filesystem::path& dir, const Generator& generator,
          const Discriminator* discriminator = nullptr);

Generator load_generator(const std::filesystem::path& dir);
std::optional<Discriminator> load_discriminator(const std::filesystem::path& dir);
GeneratorConfig load_generator_config(const std::filesystem::path& dir);

// Rounds every parameter to float32 precision, i.e. to exactly what a
// save/load cycle would give.
void round_to_f32(ParamSet& params);

}  // namespace outpaint::checkpoint
