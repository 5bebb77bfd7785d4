"""Record a slow-lap racing line and query it the way the agent does.

Run:  python3 demos/03_record_racing_line.py
"""

import numpy as np

from racerl import tracks
from racerl.bot import record_reference_line
from racerl.geometry import save_racing_line

track = tracks.get_track("technical")
line = record_reference_line(track)
print(f"recorded {len(line.delta)} points on {track.name} "
      f"(alpha range {line.alpha.min():.2f}..{line.alpha.max():.2f})")

save_racing_line(line, "technical_line.json")
print("saved to technical_line.json")

# the recorded line cuts corners slightly, so it is shorter than the axis
print(f"line length {line.world.length:.1f} m vs axis {track.length:.1f} m")

# the look-ahead curvature the agent would see entering the first hairpin
for delta in (100.0, 150.0, 180.0):
    lac = line.look_ahead_curvature(delta)
    print(f"LAC at delta={delta:5.0f}: {np.array2string(lac, precision=3)}")
