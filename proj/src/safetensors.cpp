#include "mergeprobe/safetensors.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mergeprobe/errors.hpp"

namespace mergeprobe {

using nlohmann::json;

namespace {

std::uint32_t load_le32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
           (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::uint16_t load_le16(const std::uint8_t* p) {
    return std::uint16_t(p[0] | (p[1] << 8));
}

std::uint64_t load_le64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void store_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void store_le64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

[[noreturn]] void malformed(const std::string& path, const std::string& why) {
    fail(ErrorCode::malformed_container, "'" + path + "': " + why);
}

}  // namespace

float f16_to_f32(std::uint16_t bits) {
    std::uint32_t sign = std::uint32_t(bits & 0x8000u) << 16;
    std::uint32_t exp = (bits >> 10) & 0x1F;
    std::uint32_t mant = bits & 0x3FF;
    std::uint32_t out;
    if (exp == 0) {
        if (mant == 0) {
            out = sign;  // signed zero
        } else {
            // subnormal: renormalize
            int shift = 0;
            while (!(mant & 0x400)) {
                mant <<= 1;
                ++shift;
            }
            out = sign | (std::uint32_t(113 - shift) << 23) | ((mant & 0x3FF) << 13);
        }
    } else if (exp == 31) {
        out = sign | 0x7F800000u | (mant << 13);  // inf / nan
    } else {
        out = sign | ((exp + 112) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(out);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) fail(ErrorCode::io_failure, "cannot open '" + path + "'");
    auto file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    if (file_size < 8) malformed(path, "shorter than the 8-byte header length field");

    std::vector<std::uint8_t> bytes(file_size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(file_size));
    if (!in) fail(ErrorCode::io_failure, "read failed for '" + path + "'");

    std::uint64_t header_len = load_le64(bytes.data());
    if (header_len > file_size - 8) malformed(path, "header length exceeds file size");

    const char* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
    const std::uint8_t* payload = bytes.data() + 8 + header_len;
    std::uint64_t payload_size = file_size - 8 - header_len;

    // Track top-level keys during parsing; nlohmann's map would silently keep
    // the last of a duplicated key otherwise.
    std::vector<std::string> seen_keys;
    json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
        if (event == json::parse_event_t::key && depth == 1) {
            seen_keys.push_back(parsed.get<std::string>());
        }
        return true;
    };
    json header;
    try {
        header = json::parse(header_begin, header_begin + header_len, cb);
    } catch (const json::exception& e) {
        malformed(path, std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) malformed(path, "header is not a JSON object");

    {
        std::set<std::string> unique(seen_keys.begin(), seen_keys.end());
        if (unique.size() != seen_keys.size()) {
            for (std::size_t i = 0; i < seen_keys.size(); ++i) {
                for (std::size_t j = i + 1; j < seen_keys.size(); ++j) {
                    if (seen_keys[i] == seen_keys[j]) {
                        fail(ErrorCode::duplicate_tensor_name,
                             "'" + path + "': duplicate header key '" + seen_keys[i] + "'");
                    }
                }
            }
        }
    }

    Checkpoint ckpt;
    std::vector<std::string> nonfinite;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) malformed(path, "__metadata__ is not an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) malformed(path, "__metadata__ value for '" + k + "' is not a string");
                ckpt.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (name.empty()) malformed(path, "empty tensor name");
        if (!entry.is_object()) malformed(path, "entry for '" + name + "' is not an object");
        for (const auto& [k, v] : entry.items()) {
            (void)v;
            if (k != "dtype" && k != "shape" && k != "data_offsets")
                malformed(path, "unexpected key '" + k + "' in entry for '" + name + "'");
        }
        if (!entry.contains("dtype") || !entry.contains("shape") || !entry.contains("data_offsets"))
            malformed(path, "entry for '" + name + "' is missing dtype/shape/data_offsets");

        std::string dtype = entry["dtype"].is_string() ? entry["dtype"].get<std::string>() : "";
        if (dtype != "F32" && dtype != "F16")
            malformed(path, "unsupported dtype '" + dtype + "' for '" + name + "'");
        std::size_t elem_size = dtype == "F32" ? 4 : 2;

        if (!entry["shape"].is_array()) malformed(path, "shape for '" + name + "' is not an array");
        Tensor tensor;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() <= 0)
                malformed(path, "non-positive dimension in shape for '" + name + "'");
            tensor.shape.push_back(d.get<std::int64_t>());
        }
        std::uint64_t numel = tensor.numel();

        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_integer() ||
            !offs[1].is_number_integer())
            malformed(path, "data_offsets for '" + name + "' must be [begin, end]");
        std::uint64_t begin = offs[0].get<std::uint64_t>();
        std::uint64_t end = offs[1].get<std::uint64_t>();
        if (begin > end || end > payload_size)
            malformed(path, "data_offsets for '" + name + "' fall outside the payload");
        if (end - begin != numel * elem_size)
            malformed(path, "payload for '" + name + "' holds " +
                                std::to_string((end - begin) / elem_size) +
                                " elements, shape declares " + std::to_string(numel));

        tensor.data.resize(numel);
        const std::uint8_t* src = payload + begin;
        bool finite = true;
        if (dtype == "F32") {
            for (std::uint64_t i = 0; i < numel; ++i) {
                tensor.data[i] = std::bit_cast<float>(load_le32(src + i * 4));
                finite &= std::isfinite(tensor.data[i]);
            }
        } else {
            for (std::uint64_t i = 0; i < numel; ++i) {
                tensor.data[i] = f16_to_f32(load_le16(src + i * 2));
                finite &= std::isfinite(tensor.data[i]);
            }
        }
        if (!finite) nonfinite.push_back(name);
        ckpt.tensors.emplace(name, std::move(tensor));
    }

    if (!nonfinite.empty()) {
        std::ostringstream os;
        os << "'" << path << "': non-finite values in";
        for (const auto& n : nonfinite) os << " '" << n << "'";
        fail(ErrorCode::nonfinite_weights, os.str());
    }
    return ckpt;
}

std::string checkpoint_bytes(const Checkpoint& checkpoint) {
    json header = json::object();
    if (!checkpoint.metadata.empty()) {
        header["__metadata__"] = checkpoint.metadata;
    }
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : checkpoint.tensors) {
        std::uint64_t bytes = tensor.numel() * 4;
        header[name] = {{"dtype", "F32"},
                        {"shape", tensor.shape},
                        {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string header_str = header.dump();

    std::string out;
    out.reserve(8 + header_str.size() + offset);
    store_le64(out, header_str.size());
    out += header_str;
    for (const auto& [name, tensor] : checkpoint.tensors) {
        (void)name;
        for (float v : tensor.data) store_le32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    std::string bytes = checkpoint_bytes(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::io_failure, "write failed for '" + path + "'");
}

}  // namespace mergeprobe
