#include "sylloscope/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "sylloscope/errors.hpp"

namespace syl {

using nlohmann::json;

CheckpointFile CheckpointFile::open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_model("cannot open checkpoint file: " + path.string());

    uint64_t header_len = 0;
    unsigned char lenbuf[8];
    if (!in.read(reinterpret_cast<char*>(lenbuf), 8)) {
        throw_model("checkpoint truncated before header length: " + path.string());
    }
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | lenbuf[i];

    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
        throw_model("checkpoint truncated inside header: " + path.string());
    }

    json doc;
    try {
        doc = json::parse(header);
    } catch (const json::exception& e) {
        throw_model("checkpoint header is not valid JSON: " + std::string(e.what()));
    }

    CheckpointFile file;
    file.path_ = path;
    file.data_offset_ = 8 + header_len;
    for (auto& [name, val] : doc.items()) {
        if (name == "__metadata__") continue;
        TensorInfo ti;
        ti.dtype = val.at("dtype").get<std::string>();
        ti.shape = val.at("shape").get<std::vector<int64_t>>();
        auto offs = val.at("data_offsets").get<std::vector<uint64_t>>();
        if (offs.size() != 2 || offs[1] < offs[0]) {
            throw_model("bad data_offsets for tensor '" + name + "'");
        }
        ti.begin = offs[0];
        ti.end = offs[1];
        file.entries_.emplace(name, std::move(ti));
    }
    return file;
}

const TensorInfo& CheckpointFile::info(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw_model("missing tensor '" + name + "' in " + path_.string());
    return it->second;
}

std::vector<std::string> CheckpointFile::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (auto& [name, _] : entries_) out.push_back(name);
    return out;
}

Tensor CheckpointFile::read_f32(const std::string& name) const {
    const TensorInfo& ti = info(name);
    if (ti.dtype != "F32") {
        throw_model("tensor '" + name + "' has dtype " + ti.dtype + ", expected F32");
    }
    int64_t count = 1;
    for (int64_t d : ti.shape) count *= d;
    uint64_t bytes = ti.end - ti.begin;
    if (bytes != static_cast<uint64_t>(count) * sizeof(float)) {
        throw_model("tensor '" + name + "' byte range does not match shape");
    }

    Tensor t(ti.shape);
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw_model("cannot reopen checkpoint file: " + path_.string());
    in.seekg(static_cast<std::streamoff>(data_offset_ + ti.begin));
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes))) {
        throw_model("short read for tensor '" + name + "'");
    }
    return t;
}

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    json header = json::object();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        uint64_t bytes = static_cast<uint64_t>(t->size()) * sizeof(float);
        header[name] = {
            {"dtype", "F32"},
            {"shape", t->shape()},
            {"data_offsets", {offset, offset + bytes}},
        };
        offset += bytes;
    }
    std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw_data("cannot write checkpoint file: " + path.string());
    uint64_t hlen = htext.size();
    unsigned char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>((hlen >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(lenbuf), 8);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : tensors) {
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(static_cast<uint64_t>(t->size()) * sizeof(float)));
    }
    if (!out) throw_data("failed writing checkpoint file: " + path.string());
}

}  // namespace syl
