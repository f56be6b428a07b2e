// Display-side geometry: great-circle distances for edge hovers and the
// equirectangular projection used by the offline map (no tile service).

export const EARTH_RADIUS_KM = 6371.0088;

export function haversineKm(lat1: number, lon1: number, lat2: number, lon2: number): number {
  const rad = Math.PI / 180;
  const dLat = (lat2 - lat1) * rad;
  const dLon = (lon2 - lon1) * rad;
  const h =
    Math.sin(dLat / 2) ** 2 +
    Math.cos(lat1 * rad) * Math.cos(lat2 * rad) * Math.sin(dLon / 2) ** 2;
  return 2 * EARTH_RADIUS_KM * Math.asin(Math.min(1, Math.sqrt(h)));
}

export interface Bounds {
  latMin: number;
  latMax: number;
  lonMin: number;
  lonMax: number;
}

export function boundsOf(points: { lat: number; lon: number }[]): Bounds {
  let latMin = Infinity;
  let latMax = -Infinity;
  let lonMin = Infinity;
  let lonMax = -Infinity;
  for (const p of points) {
    latMin = Math.min(latMin, p.lat);
    latMax = Math.max(latMax, p.lat);
    lonMin = Math.min(lonMin, p.lon);
    lonMax = Math.max(lonMax, p.lon);
  }
  return { latMin, latMax, lonMin, lonMax };
}

export type Projector = (lat: number, lon: number) => [number, number];

/**
 * Equirectangular projector fitting `bounds` into a width x height canvas
 * with `pad` pixels of margin; aspect is preserved, north is up.
 */
export function makeProjector(bounds: Bounds, width: number, height: number, pad = 20): Projector {
  const spanLon = Math.max(bounds.lonMax - bounds.lonMin, 1e-6);
  const spanLat = Math.max(bounds.latMax - bounds.latMin, 1e-6);
  const scale = Math.min((width - 2 * pad) / spanLon, (height - 2 * pad) / spanLat);
  const cx = (bounds.lonMin + bounds.lonMax) / 2;
  const cy = (bounds.latMin + bounds.latMax) / 2;
  return (lat, lon) => [width / 2 + (lon - cx) * scale, height / 2 - (lat - cy) * scale];
}
