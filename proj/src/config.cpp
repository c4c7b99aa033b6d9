#include "rtatl/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rtatl/errors.hpp"

namespace rtatl {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// Raw key-value view with consumption tracking; leftover keys are schema errors.
class KvReader {
public:
    explicit KvReader(const std::string& text) {
        std::stringstream ss(text);
        std::string line;
        int lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string val = trim(t.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            if (kv_.count(key)) throw ConfigError("duplicate key '" + key + "'");
            kv_[key] = val;
        }
    }

    bool has(const std::string& k) const { return kv_.count(k) > 0; }

    std::string req(const std::string& k) {
        auto it = kv_.find(k);
        if (it == kv_.end()) throw ConfigError("missing key '" + k + "'");
        used_.insert(k);
        return it->second;
    }

    std::string opt(const std::string& k, const std::string& dflt) {
        auto it = kv_.find(k);
        if (it == kv_.end()) return dflt;
        used_.insert(k);
        return it->second;
    }

    int req_int(const std::string& k) { return parse_int(k, req(k)); }
    double req_double(const std::string& k) { return parse_double(k, req(k)); }
    int opt_int(const std::string& k, int dflt) {
        return has(k) ? parse_int(k, req(k)) : dflt;
    }
    double opt_double(const std::string& k, double dflt) {
        return has(k) ? parse_double(k, req(k)) : dflt;
    }
    std::vector<int> req_int_list(const std::string& k) { return parse_int_list(k, req(k)); }
    std::vector<int> opt_int_list(const std::string& k, std::vector<int> dflt) {
        return has(k) ? parse_int_list(k, req(k)) : dflt;
    }

    void check_all_consumed() const {
        for (const auto& [k, v] : kv_)
            if (!used_.count(k)) throw ConfigError("unknown key '" + k + "'");
    }

    int parse_int(const std::string& k, const std::string& v) {
        try {
            size_t pos = 0;
            int r = std::stoi(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return r;
        } catch (...) {
            throw ConfigError("key '" + k + "': expected integer, got '" + v + "'");
        }
    }

    double parse_double(const std::string& k, const std::string& v) {
        try {
            size_t pos = 0;
            double r = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return r;
        } catch (...) {
            throw ConfigError("key '" + k + "': expected number, got '" + v + "'");
        }
    }

    std::vector<int> parse_int_list(const std::string& k, const std::string& v) {
        std::vector<int> out;
        for (const std::string& part : split(v, ','))
            if (!part.empty()) out.push_back(parse_int(k, part));
        return out;
    }

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> used_;
};

}  // namespace

int AUSpec::au_index(int au_id) const {
    for (size_t i = 0; i < au_ids.size(); ++i)
        if (au_ids[i] == au_id) return static_cast<int>(i);
    return -1;
}

void validate_config(const AUSpec& spec, const HyperParams& hp) {
    static const std::set<std::string> known = {"BP4D", "DISFA", "SYNTH"};
    if (!known.count(spec.dataset_name))
        throw ConfigError("unknown dataset_name '" + spec.dataset_name + "'");
    if (spec.au_ids.empty()) throw ConfigError("key 'au_ids': empty AU list");
    {
        std::set<int> uniq(spec.au_ids.begin(), spec.au_ids.end());
        if (uniq.size() != spec.au_ids.size()) throw ConfigError("key 'au_ids': duplicate AU id");
    }
    if (spec.dataset_name == "BP4D" && spec.n_aus() != 12)
        throw ConfigError("BP4D config must list 12 AUs, got " + std::to_string(spec.n_aus()));
    if (spec.dataset_name == "DISFA" && spec.n_aus() != 8)
        throw ConfigError("DISFA config must list 8 AUs, got " + std::to_string(spec.n_aus()));
    if (spec.patch_size <= 0 || spec.patch_size % 2 != 0)
        throw ConfigError("key 'patch_size': must be positive and even");
    if (static_cast<int>(spec.roi_rules.size()) != spec.n_aus())
        throw ConfigError("roi rules must cover every AU exactly once");
    for (int i = 0; i < spec.n_aus(); ++i) {
        const RoiRule& l = spec.roi_rules[i][0];
        const RoiRule& r = spec.roi_rules[i][1];
        if (l.dx != -r.dx || l.dy != r.dy)
            throw ConfigError("roi." + std::to_string(spec.au_ids[i]) +
                              ": left/right offsets must mirror (dx_l == -dx_r, dy_l == dy_r)");
    }
    if (spec.anchor_left == spec.anchor_right)
        throw ConfigError("anchor_left and anchor_right must differ");

    if (hp.d <= 0 || hp.heads <= 0 || hp.d % hp.heads != 0)
        throw ConfigError("key 'd': must be positive and divisible by heads");
    auto weight_ok = [](double w) { return w > 0.0 && w <= 1.0; };
    if (!weight_ok(hp.lambda1)) throw ConfigError("key 'lambda1': must be in (0,1]");
    if (!weight_ok(hp.lambda2)) throw ConfigError("key 'lambda2': must be in (0,1]");
    if (!weight_ok(hp.lambda_f)) throw ConfigError("key 'lambda_f': must be in (0,1]");
    if (!weight_ok(hp.lr)) throw ConfigError("key 'lr': must be in (0,1]");
    if (hp.input_size > hp.aligned_size)
        throw ConfigError("key 'input_size': must not exceed aligned_size");
    if (hp.input_size % 32 != 0)
        throw ConfigError("key 'input_size': must be divisible by 32 (trunk stride)");
    if (hp.flow_step <= 0) throw ConfigError("key 'flow_step': must be positive");
    if (hp.pseudo_threshold < 0.0 || hp.pseudo_threshold > 1.0)
        throw ConfigError("key 'pseudo_threshold': must be in [0,1]");
    if (hp.mask_fraction < 0.0 || hp.mask_fraction > 1.0)
        throw ConfigError("key 'mask_fraction': must be in [0,1]");
    if (hp.batch_size <= 0) throw ConfigError("key 'batch_size': must be positive");

    const ModelDims& md = hp.dims;
    if (md.trunk_width <= 0 || md.fused_channels <= 0 || md.roi_mid_channels <= 0 ||
        md.roi_patch_cells <= 0 || md.ofe_mid_channels <= 0)
        throw ConfigError("model channel widths must be positive");
    if (md.gen_channels.empty() || md.disc_channels.empty())
        throw ConfigError("gen_channels/disc_channels must be non-empty");
    const int gen_up = 1 << md.gen_channels.size();  // first seed layer + doublings
    if (spec.patch_size % gen_up != 0)
        throw ConfigError("key 'gen_channels': patch_size must be divisible by 2^len(gen_channels)");
    const int disc_down = 1 << md.disc_channels.size();
    if (spec.patch_size / disc_down < 1)
        throw ConfigError("key 'disc_channels': too many halvings for patch_size");
}

std::pair<AUSpec, HyperParams> load_config_string(const std::string& text) {
    KvReader kv(text);
    AUSpec spec;
    HyperParams hp;

    spec.dataset_name = kv.req("dataset_name");
    spec.au_ids = kv.req_int_list("au_ids");
    spec.patch_size = kv.req_int("patch_size");
    if (kv.has("positive_intensity_threshold"))
        spec.positive_intensity_threshold = kv.req_int("positive_intensity_threshold");
    spec.anchor_left = kv.req_int("anchor_left");
    spec.anchor_right = kv.req_int("anchor_right");
    for (int id : spec.au_ids) {
        std::array<RoiRule, 2> pair;
        for (int side = 0; side < 2; ++side) {
            const std::string key =
                "roi." + std::to_string(id) + (side == 0 ? ".left" : ".right");
            std::vector<std::string> parts = split(kv.req(key), ',');
            if (parts.size() != 3)
                throw ConfigError("key '" + key + "': expected landmark,dx,dy");
            pair[side].landmark = kv.parse_int(key, parts[0]);
            pair[side].dx = kv.parse_double(key, parts[1]);
            pair[side].dy = kv.parse_double(key, parts[2]);
        }
        spec.roi_rules.push_back(pair);
    }

    hp.d = kv.req_int("d");
    hp.heads = kv.req_int("heads");
    hp.lambda1 = kv.req_double("lambda1");
    hp.lambda2 = kv.req_double("lambda2");
    hp.lambda_f = kv.req_double("lambda_f");
    hp.lr = kv.req_double("lr");
    hp.input_size = kv.req_int("input_size");
    hp.aligned_size = kv.req_int("aligned_size");
    hp.flow_step = kv.req_int("flow_step");
    hp.pseudo_threshold = kv.req_double("pseudo_threshold");
    hp.mask_fraction = kv.opt_double("mask_fraction", hp.mask_fraction);
    hp.batch_size = kv.opt_int("batch_size", hp.batch_size);

    ModelDims dflt;
    hp.dims.trunk_width = kv.opt_int("trunk_width", dflt.trunk_width);
    hp.dims.fused_channels = kv.opt_int("fused_channels", dflt.fused_channels);
    hp.dims.roi_mid_channels = kv.opt_int("roi_mid_channels", dflt.roi_mid_channels);
    hp.dims.roi_patch_cells = kv.opt_int("roi_patch_cells", dflt.roi_patch_cells);
    hp.dims.gen_channels = kv.opt_int_list("gen_channels", dflt.gen_channels);
    hp.dims.disc_channels = kv.opt_int_list("disc_channels", dflt.disc_channels);
    hp.dims.ofe_mid_channels = kv.opt_int("ofe_mid_channels", dflt.ofe_mid_channels);

    kv.check_all_consumed();
    validate_config(spec, hp);
    return {spec, hp};
}

std::pair<AUSpec, HyperParams> load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return load_config_string(ss.str());
}

std::string serialize_config(const AUSpec& spec, const HyperParams& hp) {
    std::ostringstream os;
    os << "dataset_name = " << spec.dataset_name << "\n";
    os << "au_ids = ";
    for (size_t i = 0; i < spec.au_ids.size(); ++i) os << (i ? "," : "") << spec.au_ids[i];
    os << "\n";
    os << "patch_size = " << spec.patch_size << "\n";
    if (spec.positive_intensity_threshold)
        os << "positive_intensity_threshold = " << *spec.positive_intensity_threshold << "\n";
    os << "anchor_left = " << spec.anchor_left << "\n";
    os << "anchor_right = " << spec.anchor_right << "\n";
    for (int i = 0; i < spec.n_aus(); ++i) {
        for (int side = 0; side < 2; ++side) {
            const RoiRule& r = spec.roi_rules[i][side];
            os << "roi." << spec.au_ids[i] << (side == 0 ? ".left" : ".right") << " = " << r.landmark
               << "," << fmt_double(r.dx) << "," << fmt_double(r.dy) << "\n";
        }
    }
    os << "d = " << hp.d << "\n";
    os << "heads = " << hp.heads << "\n";
    os << "lambda1 = " << fmt_double(hp.lambda1) << "\n";
    os << "lambda2 = " << fmt_double(hp.lambda2) << "\n";
    os << "lambda_f = " << fmt_double(hp.lambda_f) << "\n";
    os << "lr = " << fmt_double(hp.lr) << "\n";
    os << "input_size = " << hp.input_size << "\n";
    os << "aligned_size = " << hp.aligned_size << "\n";
    os << "flow_step = " << hp.flow_step << "\n";
    os << "pseudo_threshold = " << fmt_double(hp.pseudo_threshold) << "\n";
    os << "mask_fraction = " << fmt_double(hp.mask_fraction) << "\n";
    os << "batch_size = " << hp.batch_size << "\n";
    os << "trunk_width = " << hp.dims.trunk_width << "\n";
    os << "fused_channels = " << hp.dims.fused_channels << "\n";
    os << "roi_mid_channels = " << hp.dims.roi_mid_channels << "\n";
    os << "roi_patch_cells = " << hp.dims.roi_patch_cells << "\n";
    os << "gen_channels = ";
    for (size_t i = 0; i < hp.dims.gen_channels.size(); ++i)
        os << (i ? "," : "") << hp.dims.gen_channels[i];
    os << "\n";
    os << "disc_channels = ";
    for (size_t i = 0; i < hp.dims.disc_channels.size(); ++i)
        os << (i ? "," : "") << hp.dims.disc_channels[i];
    os << "\n";
    os << "ofe_mid_channels = " << hp.dims.ofe_mid_channels << "\n";
    return os.str();
}

std::string config_hash(const AUSpec& spec, const HyperParams& hp) {
    const std::string s = serialize_config(spec, hp);
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int binarize_intensity(int intensity, const AUSpec& spec) {
    if (!spec.positive_intensity_threshold)
        throw ConfigError("dataset '" + spec.dataset_name + "' has no positive_intensity_threshold");
    if (intensity < 0 || intensity > 5)
        throw std::domain_error("AU intensity must be in 0..5, got " + std::to_string(intensity));
    return intensity > *spec.positive_intensity_threshold ? 1 : 0;
}

}  // namespace rtatl
