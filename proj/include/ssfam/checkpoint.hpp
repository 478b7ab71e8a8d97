#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "json.hpp"
#include "ssfam/model.hpp"
#include "ssfam/optim.hpp"

namespace ssfam {

namespace fs = std::filesystem;

inline constexpr const char* kCheckpointMagic = "SSFAMCKPT";
inline constexpr int kCheckpointVersion = 1;

/// Archive layout: magic line, header byte length line, JSON header, then
/// raw little-endian float32 tensors at the offsets listed in the header.
struct Checkpoint {
    ModelConfig model;
    nlohmann::json train_state = nlohmann::json::object();
    std::map<std::string, Matrix> params;
    std::map<std::string, Adam::State> adam;
    std::int64_t adam_step = 0;
};

namespace detail {

inline void write_floats(std::ostream& os, const Matrix& m) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(m.storage().data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    } else {
        for (float f : m.storage()) {
            auto u = std::bit_cast<std::uint32_t>(f);
            u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
            os.write(reinterpret_cast<const char*>(&u), 4);
        }
    }
}

inline void read_floats(const std::string& blob, std::size_t offset, Matrix& m) {
    const std::size_t bytes = m.size() * sizeof(float);
    if (offset + bytes > blob.size()) throw IoError("checkpoint tensor data is truncated");
    std::memcpy(m.storage().data(), blob.data() + offset, bytes);
    if constexpr (std::endian::native != std::endian::little) {
        for (float& f : m.storage()) {
            auto u = std::bit_cast<std::uint32_t>(f);
            u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
            f = std::bit_cast<float>(u);
        }
    }
}

}  // namespace detail

inline void save_checkpoint(const fs::path& path, const Model& model, const Adam* adam,
                            const nlohmann::json& train_state = nlohmann::json::object()) {
    struct Entry {
        std::string name, kind;
        const Parameter* owner;
        const Matrix* data;
    };
    std::vector<Entry> entries;
    for (const Parameter* p : model.store().all()) {
        entries.push_back({p->name, "param", p, &p->value});
        if (adam != nullptr && adam->has_state(p->name)) {
            const auto& s = adam->state().at(p->name);
            entries.push_back({p->name, "adam_m", p, &s.m});
            entries.push_back({p->name, "adam_v", p, &s.v});
        }
    }
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const Entry& e : entries) {
        nlohmann::json t = {{"name", e.name},
                            {"kind", e.kind},
                            {"shape", {e.data->rows(), e.data->cols()}},
                            {"offset", offset},
                            {"group", group_name(e.owner->group)}};
        if (e.owner->modality) t["modality"] = std::string(1, modality_tag(*e.owner->modality));
        tensors.push_back(std::move(t));
        offset += e.data->size() * sizeof(float);
    }
    const nlohmann::json header = {{"version", kCheckpointVersion},
                                   {"model", to_json(model.config())},
                                   {"train", train_state},
                                   {"adam_step", adam != nullptr ? adam->steps() : 0},
                                   {"tensors", tensors}};
    const std::string text = header.dump();

    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write checkpoint " + tmp.string());
        os << kCheckpointMagic << '\n' << text.size() << '\n' << text;
        for (const Entry& e : entries) detail::write_floats(os, *e.data);
        if (!os) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    std::string magic;
    std::getline(is, magic);
    if (magic != kCheckpointMagic) throw IoError(path.string() + " is not a checkpoint archive");
    std::string len_line;
    std::getline(is, len_line);
    std::size_t len = 0;
    try {
        len = std::stoull(len_line);
    } catch (const std::exception&) {
        throw IoError("corrupt checkpoint header length in " + path.string());
    }
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::size_t>(is.gcount()) != len) throw IoError("truncated checkpoint header in " + path.string());
    const std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(text);
        if (header.at("version").get<int>() != kCheckpointVersion) {
            throw IoError("unsupported checkpoint version " + header.at("version").dump());
        }
        ck.model = model_config_from_json(header.at("model"));
        ck.train_state = header.at("train");
        ck.adam_step = header.at("adam_step").get<std::int64_t>();
        for (const auto& t : header.at("tensors")) {
            Matrix m(t.at("shape")[0].get<int>(), t.at("shape")[1].get<int>());
            detail::read_floats(blob, t.at("offset").get<std::size_t>(), m);
            const std::string name = t.at("name");
            const std::string kind = t.at("kind");
            if (kind == "param") ck.params[name] = std::move(m);
            else if (kind == "adam_m") ck.adam[name].m = std::move(m);
            else if (kind == "adam_v") ck.adam[name].v = std::move(m);
            else throw IoError("unknown tensor kind '" + kind + "'");
        }
    } catch (const nlohmann::json::exception& ex) {
        throw IoError("corrupt checkpoint header in " + path.string() + ": " + ex.what());
    }
    return ck;
}

/// Copies every stored tensor into a model built from the same config.
inline void restore_parameters(Model& model, const Checkpoint& ck) {
    for (Parameter* p : model.store().all()) {
        auto it = ck.params.find(p->name);
        if (it == ck.params.end()) throw IoError("checkpoint lacks parameter '" + p->name + "'");
        if (!it->second.same_shape(p->value)) throw ShapeError("checkpoint parameter '" + p->name + "' has the wrong shape");
        p->value = it->second;
    }
    if (ck.params.size() != model.store().all().size()) throw IoError("checkpoint holds parameters the model does not have");
    model.refresh_derived();
}

inline Model load_model(const fs::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    Model model(ck.model);
    restore_parameters(model, ck);
    return model;
}

}  // namespace ssfam
