/** Orbit math matching the server's render convention.
 *
 * The renderer rotates the object by azimuth about +y, then elevation
 * about camera-right, translates along +z, and projects with image-x
 * equal to +x at the identity pose. Reproducing that view in a
 * right-handed lookAt camera requires mirroring the scene in x and
 * orbiting the camera with the x-negated position below. */

export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
}

const ELEVATION_LIMIT = 89.9;

export function clampOrbit(state: OrbitState): OrbitState {
  return {
    azimuthDeg: ((state.azimuthDeg % 360) + 360) % 360,
    elevationDeg: Math.max(-ELEVATION_LIMIT,
                           Math.min(ELEVATION_LIMIT, state.elevationDeg)),
    distance: Math.max(0.5, Math.min(12, state.distance)),
  };
}

/** Camera position in the (x-mirrored) viewer scene; up is +y. */
export function cameraPosition(state: OrbitState): [number, number, number] {
  const az = (state.azimuthDeg * Math.PI) / 180;
  const el = (state.elevationDeg * Math.PI) / 180;
  const d = state.distance;
  return [
    Math.sin(az) * Math.cos(el) * d,
    Math.sin(el) * d,
    -Math.cos(az) * Math.cos(el) * d,
  ];
}

export function dragOrbit(state: OrbitState, dxPixels: number,
                          dyPixels: number): OrbitState {
  return clampOrbit({
    azimuthDeg: state.azimuthDeg - dxPixels * 0.5,
    elevationDeg: state.elevationDeg + dyPixels * 0.5,
    distance: state.distance,
  });
}

export function zoomOrbit(state: OrbitState, wheelDelta: number): OrbitState {
  return clampOrbit({ ...state, distance: state.distance * Math.exp(wheelDelta * 0.001) });
}
