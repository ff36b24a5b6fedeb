#pragma once

#include <map>

#include "cen/audit_log.hpp"
#include "cen/bus.hpp"
#include "cen/vasp.hpp"

namespace cen {

/// Rebuilds the countersigned delivery evidence for one direction of a
/// transfer from the two retention logs alone: the delivered packet, the
/// sender signature over its hash and the receiver countersignature must all
/// appear in both logs and verify.
Result<NonRepudiationReceipt> reconstruct_receipt(const AuditLog& sender_log,
                                                  const AuditLog& receiver_log,
                                                  const std::string& transfer_id,
                                                  const std::string& sender_id,
                                                  const std::string& receiver_id,
                                                  const KeyLookup& keys);

/// Per-transfer compliance report derived from the transfer outcome export
/// and the retention logs: field-group completeness, claims presence,
/// receipt completeness, log-chain health.
Value build_report(const std::map<std::string, AuditLog>& logs, const Value& transfers,
                   const KeyLookup& keys);

}  // namespace cen
