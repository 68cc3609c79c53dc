"""Split a model, encode it, lose some blocks, and still decode.

Then three clients sum same-index blocks so the server decodes only the
weighted average, never an individual model.
"""
import numpy as np

from fedcod.coding import (Decoder, EncodedBlock, Offer, aggregate_blocks, agreed_coefficients,
                           encode, random_coefficients, split)

rng = np.random.default_rng(0)
k, length = 4, 10

model = rng.normal(size=length).astype(np.float32)
parts = split(model, k)
print(f"model of {length} values -> {k} partitions of {parts.shape[1]} (zero padded)")

# Six random combinations; pretend two were lost on the way.
blocks = []
for j in range(6):
    coeffs = random_coefficients(k, rng)
    blocks.append(EncodedBlock(0, 0, j, coeffs, encode(parts, coeffs)))
arrived = [blocks[i] for i in (5, 0, 3, 2)]

dec = Decoder(k)
for b in arrived:
    print(f"  block {b.block_index}: {dec.offer(b).value:9s} rank {dec.rank}")
recovered = dec.finish(length)
print("max abs error after decode:", float(np.max(np.abs(recovered - model))))

# A block that adds nothing new is refused.
extra = EncodedBlock(0, 0, 9, 2.0 * arrived[0].coeffs, 2.0 * arrived[0].payload)
fresh = Decoder(k)
fresh.offer(arrived[0])
print("same block scaled by 2:", fresh.offer(extra).value)

# Coded aggregation: each client scales by its weight and encodes with the
# shared row for index j, a relay sums the three, the server decodes once.
weights = np.array([0.5, 0.3, 0.2])
models = rng.normal(size=(3, length)).astype(np.float32)
server = Decoder(k)
for j in range(k):
    row = agreed_coefficients(j, k)
    total = None
    for i in range(3):
        b = EncodedBlock(0, i, j, row, encode(split(weights[i] * models[i], k), row))
        total = b if total is None else aggregate_blocks(total, b)
    outcome = server.offer(total)
    print(f"  index {j}: {total.agr_count} contributions -> {outcome.value}")
assert outcome is Offer.COMPLETE
average = server.finish(length)
direct = (weights[:, None] * models).sum(axis=0)
print("weighted average error:", float(np.max(np.abs(average - direct))))
