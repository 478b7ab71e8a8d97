#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ssfam/error.hpp"

namespace ssfam {

enum class Modality : std::uint8_t { visible = 0, depth = 1, thermal = 2 };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::visible, Modality::depth,
                                                        Modality::thermal};

inline char modality_tag(Modality m) {
    switch (m) {
        case Modality::visible: return 'v';
        case Modality::depth: return 'd';
        case Modality::thermal: return 't';
    }
    return '?';
}

/// Sub-directory holding the rasters of a modality inside a dataset root.
inline std::string modality_dir(Modality m) {
    switch (m) {
        case Modality::visible: return "rgb";
        case Modality::depth: return "depth";
        case Modality::thermal: return "thermal";
    }
    return "?";
}

inline Modality parse_modality(std::string_view tag) {
    if (tag == "v" || tag == "rgb") return Modality::visible;
    if (tag == "d" || tag == "depth") return Modality::depth;
    if (tag == "t" || tag == "thermal") return Modality::thermal;
    throw ConfigError("unknown modality tag '" + std::string(tag) + "'");
}

/// A modality combination. Only {v}, {v,d}, {v,t} and {v,d,t} are valid
/// inputs; iteration order is always v, d, t.
class ModalitySet {
public:
    ModalitySet() = default;
    ModalitySet(std::initializer_list<Modality> ms) {
        for (Modality m : ms) insert(m);
    }

    static ModalitySet parse(std::string_view text) {
        ModalitySet set;
        std::size_t start = 0;
        while (start <= text.size()) {
            std::size_t end = text.find(',', start);
            if (end == std::string_view::npos) end = text.size();
            std::string_view tok = text.substr(start, end - start);
            while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
            while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
            if (!tok.empty()) set.insert(parse_modality(tok));
            start = end + 1;
        }
        set.validate();
        return set;
    }

    void insert(Modality m) { bits_ |= bit(m); }
    bool contains(Modality m) const { return (bits_ & bit(m)) != 0; }
    std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
    bool empty() const { return bits_ == 0; }

    std::vector<Modality> members() const {
        std::vector<Modality> out;
        for (Modality m : kAllModalities)
            if (contains(m)) out.push_back(m);
        return out;
    }

    bool is_valid() const {
        return contains(Modality::visible) && size() >= 1;
    }

    void validate() const {
        if (!is_valid()) {
            throw ConfigError("modality set '" + to_string() +
                              "' is not one of {v}, {v,d}, {v,t}, {v,d,t}");
        }
    }

    std::string to_string() const {
        std::string out;
        for (Modality m : members()) {
            if (!out.empty()) out += ',';
            out += modality_tag(m);
        }
        return out;
    }

    friend bool operator==(const ModalitySet&, const ModalitySet&) = default;

private:
    static std::uint8_t bit(Modality m) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(m)); }
    std::uint8_t bits_ = 0;
};

}  // namespace ssfam
