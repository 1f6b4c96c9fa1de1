#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsrnet/tensor.hpp"

namespace hsrnet {

// One named array in a checkpoint file.
struct CheckpointRecord {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<float> data;

    uint64_t numel() const;
};

// On-disk layout: "HSRC", u32 version=1, u32 count, then per record
// u16 name length + name bytes + u8 ndim + u32 dims[ndim] + f32 data.
// An optional "ADAM" block with the same record layout follows for
// optimizer moments. All integers and floats little-endian.
struct Checkpoint {
    std::vector<CheckpointRecord> records;
    bool has_adam = false;
    std::vector<CheckpointRecord> adam_records;

    const CheckpointRecord* find(const std::string& name) const;
    const CheckpointRecord* find_adam(const std::string& name) const;
};

Checkpoint read_checkpoint(const std::string& path);
void write_checkpoint(const std::string& path, const Checkpoint& ck);

}  // namespace hsrnet
