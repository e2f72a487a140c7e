#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mdma/model.hpp"

namespace mdma {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'M', 'A'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

bool get_bytes(std::istream& in, void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!get_bytes(in, b, 4)) {
        throw std::runtime_error(std::string("checkpoint truncated: while reading ") + what);
    }
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    if (!get_bytes(in, b, 8)) {
        throw std::runtime_error(std::string("checkpoint truncated: while reading ") + what);
    }
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open checkpoint file for writing: " + path);
    }
    out.write(kMagic, 4);
    put_u32(out, checkpoint.version);

    nlohmann::json config;
    config["layers"] = checkpoint.config.layers;
    config["heads"] = checkpoint.config.heads;
    config["model_dim"] = checkpoint.config.model_dim;
    config["ff_dim"] = checkpoint.config.ff_dim;
    config["max_len"] = checkpoint.config.max_len;
    config["vocab_size"] = checkpoint.config.vocab_size;
    config["dropout"] = checkpoint.config.dropout;
    config["seed"] = checkpoint.config.seed;
    config["step_count"] = checkpoint.step_count;
    config["data_fingerprint"] = checkpoint.data_fingerprint;
    const std::string record = config.dump();
    put_u32(out, static_cast<std::uint32_t>(record.size()));
    out.write(record.data(), static_cast<std::streamsize>(record.size()));

    for (const NamedTensor& tensor : checkpoint.tensors) {
        put_u32(out, static_cast<std::uint32_t>(tensor.name.size()));
        out.write(tensor.name.data(), static_cast<std::streamsize>(tensor.name.size()));
        put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
        std::size_t expected = 1;
        for (std::uint64_t dim : tensor.dims) {
            put_u64(out, dim);
            expected *= static_cast<std::size_t>(dim);
        }
        if (expected != tensor.data.size()) {
            throw std::runtime_error("tensor '" + tensor.name + "' dims do not match payload");
        }
        for (float v : tensor.data) {
            put_f32(out, v);
        }
    }
    if (!out) {
        throw std::runtime_error("write failed for checkpoint file: " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint file: " + path);
    }
    char magic[4];
    if (!get_bytes(in, magic, 4)) {
        throw std::runtime_error("checkpoint truncated: file shorter than header");
    }
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint format error: bad magic bytes in " + path);
    }
    Checkpoint ckpt;
    ckpt.version = get_u32(in, "version");
    if (ckpt.version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint version mismatch: file has version " +
                                 std::to_string(ckpt.version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
    }
    const std::uint32_t record_len = get_u32(in, "config record length");
    std::string record(record_len, '\0');
    if (!get_bytes(in, record.data(), record_len)) {
        throw std::runtime_error("checkpoint truncated: config record");
    }
    nlohmann::json config;
    try {
        config = nlohmann::json::parse(record);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint format error: bad config record: ") +
                                 e.what());
    }
    try {
        ckpt.config.layers = config.at("layers").get<int>();
        ckpt.config.heads = config.at("heads").get<int>();
        ckpt.config.model_dim = config.at("model_dim").get<int>();
        ckpt.config.ff_dim = config.at("ff_dim").get<int>();
        ckpt.config.max_len = config.at("max_len").get<int>();
        ckpt.config.vocab_size = config.at("vocab_size").get<int>();
        ckpt.config.dropout = config.at("dropout").get<double>();
        ckpt.config.seed = config.at("seed").get<std::uint64_t>();
        ckpt.step_count = config.at("step_count").get<std::uint64_t>();
        ckpt.data_fingerprint = config.at("data_fingerprint").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint format error: config record missing"
                                             " field: ") +
                                 e.what());
    }

    while (true) {
        in.peek();
        if (in.eof()) {
            break;
        }
        NamedTensor tensor;
        const std::uint32_t name_len = get_u32(in, "tensor name length");
        tensor.name.resize(name_len);
        if (!get_bytes(in, tensor.name.data(), name_len)) {
            throw std::runtime_error("checkpoint truncated: tensor name");
        }
        const std::uint32_t rank = get_u32(in, "tensor rank");
        std::size_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::uint64_t dim = get_u64(in, "tensor dim");
            tensor.dims.push_back(dim);
            count *= static_cast<std::size_t>(dim);
        }
        tensor.data.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t bits = get_u32(in, "tensor payload");
            float v;
            std::memcpy(&v, &bits, 4);
            tensor.data[i] = v;
        }
        ckpt.tensors.push_back(std::move(tensor));
    }
    return ckpt;
}

}  // namespace mdma
