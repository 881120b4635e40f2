/** Static client configuration, including the annotator guidance text. */

export const INSTRUCTIONS = [
  "You will see two renditions of the same photo side by side.",
  "Pick the one with the better overall visual quality based on your first, " +
    "overall visual impression, without fixating on specific details such as " +
    "noise or compression artifacts.",
  "Click the image (or press the left / right arrow key) to choose it. " +
    "Use the mouse scroll wheel to zoom and drag to pan; both sides stay in sync. " +
    "Double-click to reset the view.",
  "A choice is required on every pair; you cannot skip.",
].join("\n\n");
