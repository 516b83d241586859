#pragma once

// Versioned binary checkpoints.
//
// Layout: 8-byte magic "SSDCKPT\0", u32 format version, u64 payload size,
// u64 FNV-1a hash of the payload, then the payload. The payload holds the
// effective configuration text, training and model configs, vocabulary,
// label schemes, every named parameter, critic running averages, Adam slots
// and the trainer's schedule and stream positions. Doubles are stored as
// raw bytes, so a round trip is bit-exact.

#include "ssd/model.hpp"
#include "ssd/optimizer.hpp"
#include "ssd/trainer.hpp"

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>

namespace ssd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    std::string config_text;
    TrainingConfig training;
    Model model;
    std::map<std::string, Adam::Slot> slots;
    TrainerState state;
};

/// Copies the model, optimizer slots and schedule state of a trainer.
CheckpointData capture(Trainer& trainer, const std::string& config_text = "");
/// Loads optimizer slots and schedule state into a trainer built over the
/// checkpoint's model (parameters are already in place).
void resume(Trainer& trainer, const CheckpointData& data);

void write_checkpoint(std::ostream& out, const CheckpointData& data);
/// Throws IntegrityError for bad magic, truncation or hash mismatch, and
/// IncompatibleCheckpoint for another format version.
CheckpointData read_checkpoint(std::istream& in);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

/// Adds every parameter's bytes to an FNV-1a hash, in group order.
std::uint64_t model_checksum(Model& model);

}  // namespace ssd
