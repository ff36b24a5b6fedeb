#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cen/report.hpp"
#include "cen/scenario.hpp"

namespace fs = std::filesystem;
using namespace cen;

namespace {

Result<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return make_error(ErrorCode::not_found, "cannot open '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Two-space indented rendering for human consumption.
void pretty_print(const Value& v, std::ostream& out, int indent = 0) {
    std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    if (v.is_map()) {
        if (v.as_map().empty()) {
            out << "{}";
            return;
        }
        out << "{\n";
        bool first = true;
        for (const auto& [key, item] : v.as_map()) {
            if (!first) out << ",\n";
            first = false;
            out << pad << "  " << must_canonicalize(Value(key)) << ": ";
            pretty_print(item, out, indent + 1);
        }
        out << "\n" << pad << "}";
    } else if (v.is_list()) {
        if (v.as_list().empty()) {
            out << "[]";
            return;
        }
        out << "[\n";
        bool first = true;
        for (const auto& item : v.as_list()) {
            if (!first) out << ",\n";
            first = false;
            out << pad << "  ";
            pretty_print(item, out, indent + 1);
        }
        out << "\n" << pad << "]";
    } else {
        out << must_canonicalize(v);
    }
}

Result<KeyLookup> load_keys(const fs::path& keys_path) {
    CEN_TRY(text, read_file(keys_path));
    CEN_TRY(doc, parse_document(text));
    CEN_TRY(participants, get_map(doc, "participants"));
    auto table = std::make_shared<std::map<std::string, Bytes>>();
    for (const auto& [id, entry] : *participants) {
        CEN_TRY(key, get_bytes(entry, "public_key"));
        table->emplace(id, key);
    }
    return KeyLookup([table](std::string_view id) -> std::optional<Bytes> {
        auto it = table->find(std::string(id));
        if (it == table->end()) return std::nullopt;
        return it->second;
    });
}

int cmd_run(const std::string& scenario_path, std::optional<std::int64_t> seed,
            const std::string& out_dir) {
    auto text = read_file(scenario_path);
    if (!text.ok()) {
        std::cerr << "error: " << text.error().to_string() << "\n";
        return 1;
    }
    auto doc = parse_document(text.value());
    if (!doc.ok()) {
        std::cerr << "error: scenario parse failed: " << doc.error().to_string() << "\n";
        return 1;
    }
    auto config = ScenarioConfig::from_value(doc.value());
    if (!config.ok()) {
        std::cerr << "error: " << config.error().to_string() << "\n";
        return 1;
    }
    if (seed) config.value().seed = static_cast<std::uint64_t>(*seed);
    auto loaded = load_dataset_files(config.value(),
                                     fs::path(scenario_path).parent_path().string());
    if (!loaded.ok()) {
        std::cerr << "error: " << loaded.error().to_string() << "\n";
        return 1;
    }

    auto result = run_scenario(config.value());
    if (!result.ok()) {
        std::cerr << "error: " << result.error().to_string() << "\n";
        return 1;
    }
    for (const auto& [rel, bytes] : result.value().render()) {
        write_file(fs::path(out_dir) / rel, bytes);
    }

    std::size_t finalized = 0, total = 0;
    for (const auto& t : result.value().report.find("transfers")->as_list()) {
        ++total;
        if (t.find("finalized")->as_bool()) ++finalized;
        std::cout << "transfer " << t.find("transfer_id")->as_string() << ":";
        for (const auto& [vasp, side] : t.find("sides")->as_map()) {
            std::cout << " " << vasp << "=" << side.find("state")->as_string();
            if (const Value* reason = side.find("reason")) {
                std::cout << "(" << reason->find("code")->as_string() << ")";
            }
        }
        std::cout << "\n";
    }
    std::cout << "scenario complete: " << total << " transfer(s), " << finalized
              << " finalized, total balance " << result.value().total_balance() << "\n"
              << "outputs written to " << out_dir << "\n";
    return 0;
}

int cmd_verify_log(const std::string& log_path, std::string keys_path) {
    auto text = read_file(log_path);
    if (!text.ok()) {
        std::cerr << "error: " << text.error().to_string() << "\n";
        return 1;
    }
    KeyLookup keys;  // structural check only when no key file is available
    if (keys_path.empty()) {
        fs::path guess = fs::path(log_path).parent_path().parent_path() / "keys.json";
        if (fs::exists(guess)) keys_path = guess.string();
    }
    if (!keys_path.empty()) {
        auto loaded = load_keys(keys_path);
        if (!loaded.ok()) {
            std::cerr << "error: " << loaded.error().to_string() << "\n";
            return 1;
        }
        keys = loaded.value();
    }
    auto log = AuditLog::deserialize(text.value(), keys);
    if (!log.ok()) {
        std::cout << "INVALID " << log_path << " (" << log.error().to_string() << ")\n";
        return 1;
    }
    bool healthy = verify_chain(log.value(), keys);
    std::cout << (healthy ? "OK " : "INVALID ") << log_path << " (" << log.value().size()
              << " entries" << (keys ? ", signatures checked" : ", chain only") << ")\n";

    // Cross-check the signed head statement when it sits next to the log.
    fs::path log_file(log_path);
    fs::path checkpoint_path =
        log_file.parent_path().parent_path() / "checkpoints" / (log_file.stem().string() + ".json");
    if (healthy && keys && fs::exists(checkpoint_path)) {
        auto check = [&]() -> Result<void> {
            CEN_TRY(cp_text, read_file(checkpoint_path));
            CEN_TRY(cp_doc, parse_document(cp_text));
            CEN_TRY(env, SignedEnvelope::from_value(cp_doc));
            auto pk = keys(env.signer_id);
            if (!pk || !envelope_ok(env, *pk)) {
                return make_error(ErrorCode::bad_signature, "checkpoint signature");
            }
            CEN_TRY(payload, env.payload_value());
            CEN_TRY(head, get_bytes(payload, "head_hash"));
            CEN_TRY(length, get_int(payload, "length"));
            if (head != log.value().head_hash() ||
                length != static_cast<std::int64_t>(log.value().size())) {
                return make_error(ErrorCode::invalid_envelope, "checkpoint mismatch");
            }
            return ok();
        }();
        if (!check.ok()) {
            std::cout << "INVALID checkpoint: " << check.error().to_string() << "\n";
            return 1;
        }
        std::cout << "checkpoint matches signed head\n";
    }
    return healthy ? 0 : 1;
}

int cmd_inspect_claim(const std::string& path) {
    auto text = read_file(path);
    if (!text.ok()) {
        std::cerr << "error: " << text.error().to_string() << "\n";
        return 1;
    }
    auto doc = parse_document(text.value());
    if (!doc.ok()) {
        std::cerr << "error: " << doc.error().to_string() << "\n";
        return 1;
    }
    const Value* claimsets = doc.value().find("claimsets");
    if (claimsets == nullptr || !claimsets->is_list()) {
        std::cerr << "error: no claim sets in this file\n";
        return 1;
    }
    int bad = 0;
    for (const auto& entry : claimsets->as_list()) {
        auto inspect = [&]() -> Result<void> {
            CEN_TRY(env_map, get_map(entry, "envelope"));
            CEN_TRY(env, SignedEnvelope::from_value(Value(*env_map)));
            CEN_TRY(issuer_key, get_bytes(entry, "issuer_public_key"));
            CEN_TRY(verified, verify_envelope(env, issuer_key));
            if (!verified) return make_error(ErrorCode::bad_signature, "signature mismatch");
            CEN_TRY(claimset, ClaimSet::from_envelope(env));
            std::cout << "claim set by " << claimset.issuer_id << " about "
                      << claimset.subject_id << " (request " << claimset.request_id
                      << ") -- signature OK\n";
            for (const auto& claim : claimset.claims) {
                std::cout << "  [" << claim.claim_id << "] " << claim.text << "\n"
                          << "    attributes: "
                          << must_canonicalize(Value(claim.attributes)) << "\n"
                          << "    valid " << claim.issued_at << " .. " << claim.expires_at
                          << "\n";
                for (const auto& p : claim.provenance) {
                    std::cout << "    provenance: " << p.algo_id << " " << p.version
                              << " over " << p.dataset_id << " at " << p.provider_id
                              << " (t=" << p.executed_at << ")\n";
                }
            }
            return ok();
        }();
        if (!inspect.ok()) {
            ++bad;
            std::cout << "claim set FAILED verification: " << inspect.error().to_string()
                      << "\n";
        }
    }
    return bad == 0 ? 0 : 1;
}

int cmd_report(const std::string& dir) {
    auto keys = load_keys(fs::path(dir) / "keys.json");
    if (!keys.ok()) {
        std::cerr << "error: " << keys.error().to_string() << "\n";
        return 1;
    }
    auto transfers_text = read_file(fs::path(dir) / "transfers.json");
    if (!transfers_text.ok()) {
        std::cerr << "error: " << transfers_text.error().to_string() << "\n";
        return 1;
    }
    auto transfers = parse_document(transfers_text.value());
    if (!transfers.ok()) {
        std::cerr << "error: " << transfers.error().to_string() << "\n";
        return 1;
    }
    std::map<std::string, AuditLog> logs;
    fs::path logs_dir = fs::path(dir) / "logs";
    if (fs::exists(logs_dir)) {
        for (const auto& entry : fs::directory_iterator(logs_dir)) {
            if (entry.path().extension() != ".log") continue;
            auto text = read_file(entry.path());
            if (!text.ok()) continue;
            auto log = AuditLog::deserialize(text.value(), keys.value());
            if (!log.ok()) {
                std::cerr << "error: " << entry.path().string() << ": "
                          << log.error().to_string() << "\n";
                return 1;
            }
            logs.emplace(entry.path().stem().string(), std::move(log).take());
        }
    }
    Value report = build_report(logs, transfers.value(), keys.value());
    pretty_print(report, std::cout);
    std::cout << "\n";
    for (const auto& [node, healthy] : report.find("log_chains")->as_map()) {
        if (!healthy.as_bool()) return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"claims-exchange network simulator"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir = "out", log_path, keys_path, claim_path, report_dir;
    std::optional<std::int64_t> seed;

    auto* run = app.add_subcommand("run", "run a scenario to quiescence");
    run->add_option("--scenario", scenario_path, "scenario document")->required();
    run->add_option("--seed", seed, "override the scenario seed");
    run->add_option("--out", out_dir, "output directory");

    auto* verify = app.add_subcommand("verify-log", "verify a retention log's hash chain");
    verify->add_option("file", log_path, "log file")->required();
    verify->add_option("--keys", keys_path, "participant key file");

    auto* inspect = app.add_subcommand("inspect-claim", "pretty-print and re-verify claim sets");
    inspect->add_option("file", claim_path, "claim store export")->required();

    auto* report = app.add_subcommand("report", "emit the compliance report for a run directory");
    report->add_option("dir", report_dir, "run output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return cmd_run(scenario_path, seed, out_dir);
    if (verify->parsed()) return cmd_verify_log(log_path, keys_path);
    if (inspect->parsed()) return cmd_inspect_claim(claim_path);
    if (report->parsed()) return cmd_report(report_dir);
    return 1;
}
